//! Tiny parser for the `name(arg, arg, ...)` expressions used by policy,
//! noise, and workload specifications.

/// Splits `name(a, b(c, d), e)` into `("name", ["a", "b(c, d)", "e"])`.
/// A bare `name` yields no arguments.
pub(crate) fn parse_call(input: &str) -> Result<(String, Vec<String>), String> {
    let input = input.trim();
    let Some(open) = input.find('(') else {
        if input.is_empty() || input.contains(')') || input.contains(',') {
            return Err(format!("malformed expression `{input}`"));
        }
        return Ok((input.to_string(), Vec::new()));
    };
    if !input.ends_with(')') {
        return Err(format!("missing closing parenthesis in `{input}`"));
    }
    let name = input[..open].trim();
    if name.is_empty() {
        return Err(format!("missing name in `{input}`"));
    }
    let body = &input[open + 1..input.len() - 1];
    let mut args = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, c) in body.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth = depth
                    .checked_sub(1)
                    .ok_or_else(|| format!("unbalanced parentheses in `{input}`"))?;
            }
            ',' if depth == 0 => {
                args.push(body[start..i].trim().to_string());
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(format!("unbalanced parentheses in `{input}`"));
    }
    let last = body[start..].trim();
    if !last.is_empty() || !args.is_empty() {
        args.push(last.to_string());
    }
    if args.iter().any(|a| a.is_empty()) {
        return Err(format!("empty argument in `{input}`"));
    }
    Ok((name.to_string(), args))
}

pub(crate) fn expect_args(name: &str, args: &[String], n: usize) -> Result<(), String> {
    if args.len() == n {
        Ok(())
    } else {
        Err(format!(
            "`{name}` takes {n} argument(s), got {}",
            args.len()
        ))
    }
}

pub(crate) fn parse_num<T: std::str::FromStr>(what: &str, s: &str) -> Result<T, String> {
    s.trim()
        .parse()
        .map_err(|_| format!("invalid {what} `{s}`"))
}
