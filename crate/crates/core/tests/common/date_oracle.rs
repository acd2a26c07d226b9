//! Date rendering oracle built on the `time` crate, shared by test targets.

use proptest::prelude::*;
use time::{macros::date, Date, Duration};

const NAMES: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October",
    "November", "December",
];

#[derive(Debug, Clone)]
pub enum Fmt {
    Mdy { sep: char, padded: bool, two_digit: bool },
    Dmy { sep: char, padded: bool, two_digit: bool },
    Ymd { sep: char, padded: bool },
    Named { abbr: bool, period: bool, comma: bool, padded: bool },
}

fn two(n: u8, padded: bool) -> String {
    if padded {
        format!("{n:02}")
    } else {
        n.to_string()
    }
}

pub fn render(d: Date, f: &Fmt) -> String {
    let (y, m, day) = (d.year(), u8::from(d.month()), d.day());
    let year = |two_digit: bool| {
        if two_digit {
            format!("{:02}", y.rem_euclid(100))
        } else {
            format!("{y:04}")
        }
    };
    match f {
        Fmt::Mdy { sep, padded, two_digit } => {
            format!("{}{sep}{}{sep}{}", two(m, *padded), two(day, *padded), year(*two_digit))
        }
        Fmt::Dmy { sep, padded, two_digit } => {
            format!("{}{sep}{}{sep}{}", two(day, *padded), two(m, *padded), year(*two_digit))
        }
        Fmt::Ymd { sep, padded } => format!("{}{sep}{}{sep}{}", year(false), two(m, *padded), two(day, *padded)),
        Fmt::Named { abbr, period, comma, padded } => {
            let full = NAMES[m as usize - 1];
            let name = if *abbr { &full[..3] } else { full };
            format!(
                "{name}{} {}{} {y}",
                if *period { "." } else { "" },
                two(day, *padded),
                if *comma { "," } else { "" }
            )
        }
    }
}

/// Numeric fields that are both two digits wide read as zero-padded; a
/// named month's day shows padding only below 10.
pub fn effective(d: Date, f: &Fmt) -> Fmt {
    let wide = u8::from(d.month()) >= 10 && d.day() >= 10;
    match f.clone() {
        Fmt::Mdy { sep, padded, two_digit } => Fmt::Mdy { sep, padded: padded || wide, two_digit },
        Fmt::Dmy { sep, padded, two_digit } => Fmt::Dmy { sep, padded: padded || wide, two_digit },
        Fmt::Ymd { sep, padded } => Fmt::Ymd { sep, padded: padded || wide },
        Fmt::Named { abbr, period, comma, padded } => Fmt::Named {
            // Bare "May" reads as the full name.
            abbr: abbr && (period || u8::from(d.month()) != 5),
            period,
            comma,
            padded: padded && d.day() < 10,
        },
    }
}

pub fn fmt_strategy() -> impl Strategy<Value = Fmt> {
    let sep = prop::sample::select(vec!['/', '-', '.']);
    prop_oneof![
        (sep.clone(), any::<bool>(), any::<bool>()).prop_map(|(sep, padded, two_digit)| Fmt::Mdy { sep, padded, two_digit }),
        (sep.clone(), any::<bool>(), any::<bool>()).prop_map(|(sep, padded, two_digit)| Fmt::Dmy { sep, padded, two_digit }),
        (sep, any::<bool>()).prop_map(|(sep, padded)| Fmt::Ymd { sep, padded }),
        (any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>())
            .prop_map(|(abbr, p, comma, padded)| Fmt::Named { abbr, period: abbr && p, comma, padded }),
    ]
}

pub fn case() -> impl Strategy<Value = (Date, Fmt, i64)> {
    (fmt_strategy(), 0i64..73_000, -400i64..=400).prop_filter_map("unambiguous", |(f, offset, shift)| {
        let d = date!(1900 - 01 - 01) + Duration::days(offset);
        let two_digit = matches!(f, Fmt::Mdy { two_digit: true, .. } | Fmt::Dmy { two_digit: true, .. });
        if two_digit && !(1950..=2049).contains(&d.year()) {
            return None;
        }
        // Day-first strings whose day could be a month read as month-first.
        if matches!(f, Fmt::Dmy { .. }) && d.day() <= 12 {
            return None;
        }
        Some((d, f, shift))
    })
}
