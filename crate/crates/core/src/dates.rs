//! Recognition and format-preserving shifting of date strings.
//!
//! Shipped formats: numeric dates with `/`, `-` or `.` separators in
//! month-day-year, day-month-year or year-month-day order (2- or 4-digit
//! years for the first two), `Month D, YYYY`, and decade forms such as
//! `1990s` or `80's`.

use std::sync::OnceLock;

use chrono::{Datelike, Duration, NaiveDate};
use regex::Regex;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    Mdy,
    Dmy,
    Ymd,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DateFormat {
    Numeric {
        order: Order,
        sep: char,
        /// Month and day zero-padded to two digits.
        padded: bool,
        /// 2 or 4.
        year_digits: usize,
    },
    MonthName {
        abbreviated: bool,
        /// Abbreviation written with a trailing period.
        period: bool,
        comma: bool,
        padded: bool,
    },
}

/// A date string understood well enough to be shifted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedDate {
    pub date: NaiveDate,
    pub format: DateFormat,
}

/// `1990s`, `1980's`, `80's`, `50s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decade {
    /// Decade start as written: 1990 for "1990s", 80 for "80's".
    pub value: u32,
    pub four_digit: bool,
    pub apostrophe: bool,
}

pub const MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September",
    "October", "November", "December",
];

fn numeric_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\d{1,4})([/.-])(\d{1,2})([/.-])(\d{1,4})$").expect("static regex"))
}

fn month_name_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^([A-Za-z]+)(\.?) (\d{1,2})(,?) (\d{4})$").expect("static regex")
    })
}

fn decade_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\d{2}|\d{4})('?)s$").expect("static regex"))
}

fn expand_year(yy: i32) -> i32 {
    if yy >= 50 {
        1900 + yy
    } else {
        2000 + yy
    }
}

fn month_from_name(name: &str) -> Option<(u32, bool)> {
    let lower = name.to_lowercase();
    for (i, m) in MONTHS.iter().enumerate() {
        let ml = m.to_lowercase();
        if lower == ml {
            return Some((i as u32 + 1, false));
        }
        if lower.len() == 3 && ml.starts_with(&lower) {
            return Some((i as u32 + 1, true));
        }
    }
    None
}

/// Parses a date in one of the shipped formats. Ambiguous numeric dates
/// read as month-day-year unless the first field cannot be a month.
pub fn parse_date(text: &str) -> Option<ParsedDate> {
    let text = text.trim();
    if let Some(c) = numeric_re().captures(text) {
        let (a, s1, b, s2, y) = (&c[1], &c[2], &c[3], &c[4], &c[5]);
        let sep = s1.chars().next()?;
        if s1 != s2 {
            return None;
        }
        if a.len() == 4 {
            if b.is_empty() || y.len() > 2 {
                return None;
            }
            let date = NaiveDate::from_ymd_opt(a.parse().ok()?, b.parse().ok()?, y.parse().ok()?)?;
            return Some(ParsedDate {
                date,
                format: DateFormat::Numeric {
                    order: Order::Ymd,
                    sep,
                    padded: is_padded(b, y),
                    year_digits: 4,
                },
            });
        }
        if a.len() > 2 || !(y.len() == 2 || y.len() == 4) {
            return None;
        }
        let (an, bn): (u32, u32) = (a.parse().ok()?, b.parse().ok()?);
        let year_digits = y.len();
        let year: i32 = y.parse().ok()?;
        let year = if year_digits == 2 { expand_year(year) } else { year };
        let (order, month, day) = if an <= 12 {
            (Order::Mdy, an, bn)
        } else {
            (Order::Dmy, bn, an)
        };
        let date = NaiveDate::from_ymd_opt(year, month, day)?;
        return Some(ParsedDate {
            date,
            format: DateFormat::Numeric {
                order,
                sep,
                padded: is_padded(a, b),
                year_digits,
            },
        });
    }
    if let Some(c) = month_name_re().captures(text) {
        let (month, abbreviated) = month_from_name(&c[1])?;
        let period = !c[2].is_empty();
        // "May." is the abbreviation; bare "May" the full name.
        let abbreviated = abbreviated || (period && c[1].len() == 3);
        if period && !abbreviated {
            return None;
        }
        let day: u32 = c[3].parse().ok()?;
        let date = NaiveDate::from_ymd_opt(c[5].parse().ok()?, month, day)?;
        return Some(ParsedDate {
            date,
            format: DateFormat::MonthName {
                abbreviated,
                period,
                comma: !c[4].is_empty(),
                padded: c[3].starts_with('0'),
            },
        });
    }
    None
}

/// Padding class of a month/day pair: a leading zero anywhere, or two
/// two-digit fields, means zero-padded.
fn is_padded(x: &str, y: &str) -> bool {
    x.starts_with('0') || y.starts_with('0') || (x.len() == 2 && y.len() == 2)
}

fn pad(n: u32, padded: bool) -> String {
    if padded {
        format!("{n:02}")
    } else {
        n.to_string()
    }
}

/// Renders `date` in `format`.
pub fn format_date(date: NaiveDate, format: &DateFormat) -> String {
    match format {
        DateFormat::Numeric {
            order,
            sep,
            padded,
            year_digits,
        } => {
            let y = if *year_digits == 2 {
                format!("{:02}", date.year().rem_euclid(100))
            } else {
                format!("{:04}", date.year())
            };
            let m = pad(date.month(), *padded);
            let d = pad(date.day(), *padded);
            match order {
                Order::Mdy => format!("{m}{sep}{d}{sep}{y}"),
                Order::Dmy => format!("{d}{sep}{m}{sep}{y}"),
                Order::Ymd => format!("{y}{sep}{m}{sep}{d}"),
            }
        }
        DateFormat::MonthName {
            abbreviated,
            period,
            comma,
            padded,
        } => {
            let full = MONTHS[date.month0() as usize];
            let name = if *abbreviated { &full[..3] } else { full };
            format!(
                "{name}{} {}{} {}",
                if *period { "." } else { "" },
                pad(date.day(), *padded),
                if *comma { "," } else { "" },
                date.year()
            )
        }
    }
}

/// Shifts a recognised date by `days`, keeping its textual format. Returns
/// `None` for text that is not a shipped date format or when the result
/// would leave the representable range of the format.
pub fn shift_date_text(text: &str, days: i64) -> Option<String> {
    let p = parse_date(text)?;
    let shifted = p.date.checked_add_signed(Duration::days(days))?;
    if !(1000..=9999).contains(&shifted.year()) {
        return None;
    }
    Some(format_date(shifted, &p.format))
}

pub fn parse_decade(text: &str) -> Option<Decade> {
    let c = decade_re().captures(text.trim())?;
    let value: u32 = c[1].parse().ok()?;
    if value % 10 != 0 {
        return None;
    }
    Some(Decade {
        value,
        four_digit: c[1].len() == 4,
        apostrophe: !c[2].is_empty(),
    })
}

pub fn format_decade(d: &Decade) -> String {
    if d.four_digit {
        format!("{}{}s", d.value, if d.apostrophe { "'" } else { "" })
    } else {
        format!("{:02}{}s", d.value, if d.apostrophe { "'" } else { "" })
    }
}
