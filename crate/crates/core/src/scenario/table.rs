use std::fmt::Write;

/// Tab-separated table with a single header line.
#[derive(Debug, Clone)]
pub struct Table {
    columns: usize,
    text: String,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join("\t");
        text.push('\n');
        Self {
            columns: header.len(),
            text,
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "row width does not match header");
        self.text.push_str(&cells.join("\t"));
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Shortest round-trip form, in exponent notation outside `[1e-4, 1e15)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    let mut s = String::new();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        write!(s, "{x}").unwrap();
    } else {
        write!(s, "{x:e}").unwrap();
    }
    s
}

pub fn int(x: impl Into<u64>) -> String {
    x.into().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting() {
        assert_eq!(num(0.25), "0.25");
        assert_eq!(num(1e-7), "1e-7");
        assert_eq!(num(-3.5e20), "-3.5e20");
        assert_eq!(num(0.0), "0");
        let mut t = Table::new(&["a", "b"]);
        t.row(&[num(1.0), int(2u64)]);
        assert_eq!(t.into_string(), "a\tb\n1\t2\n");
    }
}
