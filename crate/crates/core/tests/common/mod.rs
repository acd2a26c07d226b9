pub mod date_oracle;
