// SPDX-License-Identifier: Apache-2.0

use crate::domain::Testbench;

const FENCE: &str = "```";

/// Pulls the testbench out of raw model output: the body of the last
/// complete fenced block, or the trimmed output when there is no block.
pub fn extract_testbench(raw_output: &str) -> Testbench {
    let mut last = None;
    let mut cursor = 0;
    while let Some(open_rel) = raw_output[cursor..].find(FENCE) {
        let open = cursor + open_rel;
        let mut after_open = open + FENCE.len();
        // Longer fences (````) open with their full run.
        while raw_output[after_open..].starts_with('`') {
            after_open += 1;
        }
        let fence = &raw_output[open..after_open];
        // Skip the info string (language tag) up to the end of the line.
        let body_start = match raw_output[after_open..].find('\n') {
            Some(nl) if !raw_output[after_open..after_open + nl].contains('`') => after_open + nl + 1,
            _ => after_open,
        };
        let Some(close_rel) = raw_output[body_start..].find(fence) else {
            break;
        };
        let close = body_start + close_rel;
        last = Some(&raw_output[body_start..close]);
        cursor = close + fence.len();
    }
    match last {
        Some(body) => {
            Testbench::new(body.strip_suffix('\n').unwrap_or(body))
        }
        None => Testbench::new(raw_output.trim()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn inline_fence_after_prose() {
        assert_eq!(
            extract_testbench("Here: ```\nmodule tb; endmodule\n```").text,
            "module tb; endmodule"
        );
    }

    #[test]
    fn no_fence_returns_trimmed() {
        assert_eq!(
            extract_testbench("  module tb; endmodule \n").text,
            "module tb; endmodule"
        );
    }

    #[test]
    fn last_block_wins() {
        let raw = "draft:\n```verilog\nmodule a; endmodule\n```\nfinal:\n```systemverilog\nmodule b; endmodule\n```\n";
        assert_eq!(extract_testbench(raw).text, "module b; endmodule");
    }

    #[test]
    fn empty_and_unclosed() {
        assert!(extract_testbench("").is_empty());
        assert!(extract_testbench("```\n```").is_empty());
        assert_eq!(extract_testbench("```\nmodule tb;").text, "```\nmodule tb;");
    }

    #[test]
    fn longer_fence_protects_inner_backticks() {
        let raw = "````sv\nx ``` y\n````";
        assert_eq!(extract_testbench(raw).text, "x ``` y");
    }

    proptest! {
        #[test]
        fn single_fence_is_identity(payload in "[^`]{0,200}") {
            let wrapped = format!("```\n{payload}\n```");
            prop_assert_eq!(extract_testbench(&wrapped).text, payload);
        }
    }
}
