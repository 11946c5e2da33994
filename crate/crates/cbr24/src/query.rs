//! Prompt construction for the three query kinds and parsing of solver
//! responses. The block layouts are frozen; tests pin them byte for byte.

use crate::domain::{pair_makes, Puzzle, Solution};
use crate::repository::Case;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueryKind {
    #[serde(rename = "NC")]
    NoContext,
    #[serde(rename = "GC")]
    GeneralContext,
    #[serde(rename = "TC")]
    TopContext,
}

impl QueryKind {
    pub const ALL: [QueryKind; 3] = [
        QueryKind::NoContext,
        QueryKind::GeneralContext,
        QueryKind::TopContext,
    ];

    pub fn code(self) -> &'static str {
        match self {
            QueryKind::NoContext => "NC",
            QueryKind::GeneralContext => "GC",
            QueryKind::TopContext => "TC",
        }
    }
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for QueryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NC" => Ok(QueryKind::NoContext),
            "GC" => Ok(QueryKind::GeneralContext),
            "TC" => Ok(QueryKind::TopContext),
            other => Err(format!("unknown query kind {other:?} (expected NC, GC or TC)")),
        }
    }
}

pub const SYSTEM_PROMPT: &str = "You are a student taking a test to solve a Math-24 puzzle. A Math-24 puzzle requires you to use 4 numbers to make 24. Each number must be used exactly once, and may use the + - * / operators. Once you have solved the puzzle, you must end your answer with \"Final Answer: [LHS] = 24\" where [LHS] is uses ALL 4 numbers EXACTLY once to get to 24. For example, if the puzzle is 1 2 9 13 then ending with \"Final Answer: (13 + 9 + 2) * 1 = 24\" will get you full marks. If you end your answer using any other convention you will get no marks, even if your final answer is correct. For example, if you end with \"Final Answer: (13+9+2)=24; 24*1=24\", this will get you no marks because your format is wrong, even though your answer is correct. If you end with \"Final Answer: (13 + 9 + 2) = 24\", this will also get you no marks because you have omitted the 1, even though your answer is correct. When giving your final answer, do not use any special formatting such as bold or italics, latex, etc. You must use only plain text.";

const GENERAL_PLAN: &str = "a) use a pair of numbers to make 24, 12, 8 or 6\nb) use the remaining pair of numbers to make 1, 2, 3 or 4 respectively\nc) then the product of step a) and step b) equals 24";

/// A concrete execution plan lifted from one retrieved solution: which two
/// numbers of the test puzzle sit at the retrieved large positions, and the
/// pair targets to aim for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Tip {
    pub pair: (i64, i64),
    pub large: i64,
    pub small: i64,
}

/// Map a retrieved solution onto the test puzzle by position.
pub fn derive_tip(test: &Puzzle, solution: &Solution) -> Tip {
    let n = test.numbers();
    let (p, q) = solution.large_positions;
    Tip {
        pair: (n[p as usize - 1], n[q as usize - 1]),
        large: solution.category.large(),
        small: solution.category.small(),
    }
}

/// True when the tip's plan can actually be executed on the test puzzle:
/// some pair makes the large target and the remaining pair makes the small
/// one. The suggested pair itself does not have to work; the tip says to
/// try other pairs too.
pub fn tip_admits_solution(test: &Puzzle, tip: &Tip) -> bool {
    let n = test.numbers();
    for i in 0..4 {
        for j in (i + 1)..4 {
            let mut rest = (0..4).filter(|&p| p != i && p != j);
            let (k, l) = (rest.next().unwrap(), rest.next().unwrap());
            if pair_makes(n[i], n[j], tip.large) && pair_makes(n[k], n[l], tip.small) {
                return true;
            }
        }
    }
    false
}

fn tip_block(tip: &Tip) -> String {
    format!(
        "a) use the pair ({}, {}) to make {}. If this is impossible, try to make {} using some other pair\nb) then use the remaining pair to make {}\nc) then {} * {} = 24",
        tip.pair.0, tip.pair.1, tip.large, tip.large, tip.small, tip.large, tip.small
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub kind: QueryKind,
    pub system: String,
    pub user: String,
    pub tips: Vec<Tip>,
}

#[derive(Error, Debug, PartialEq)]
pub enum QueryError {
    #[error("top-context queries need a retrieved case")]
    MissingRetrievedCase,
}

/// Assemble the full prompt for one test puzzle. TC queries take the single
/// top retrieved case and emit one tip per stored solution, ordered by
/// ascending large target then ascending positions.
pub fn build_query(
    test: &Puzzle,
    kind: QueryKind,
    retrieved: Option<&Case>,
) -> Result<PromptBundle, QueryError> {
    // The no-context question line ends with a space after the colon; the
    // two context-bearing variants do not.
    let question = match kind {
        QueryKind::NoContext => format!(
            "START QUESTION\nSolve the following Math-24 puzzle: \n{}\nEND QUESTION",
            test
        ),
        _ => format!(
            "START QUESTION\nSolve the following Math-24 puzzle:\n{}\nEND QUESTION",
            test
        ),
    };
    let (user, tips) = match kind {
        QueryKind::NoContext => (question, Vec::new()),
        QueryKind::GeneralContext => (
            format!(
                "{}\n\nSTART CONTEXT\nTo help you answer the question, below is a tip that may help:\n{}\nEND CONTEXT",
                question, GENERAL_PLAN
            ),
            Vec::new(),
        ),
        QueryKind::TopContext => {
            let case = retrieved.ok_or(QueryError::MissingRetrievedCase)?;
            let mut keyed: Vec<(i64, (u8, u8), Tip)> = case
                .solutions
                .iter()
                .map(|s| (s.category.large(), s.large_positions, derive_tip(test, s)))
                .collect();
            keyed.sort_by_key(|&(large, pos, _)| (large, pos));
            let tips: Vec<Tip> = keyed.into_iter().map(|(_, _, t)| t).collect();
            let blocks: Vec<String> = tips.iter().map(tip_block).collect();
            (
                format!(
                    "{}\n\nSTART CONTEXT\nTo help you answer the question, below is a tip that may help:\n{}\nEND CONTEXT",
                    question,
                    blocks.join("\nOR\n")
                ),
                tips,
            )
        }
    };
    Ok(PromptBundle {
        kind,
        system: SYSTEM_PROMPT.to_string(),
        user,
        tips,
    })
}

/// Extract the left-hand side from the last line of the form
/// "Final Answer: <expr> = 24". Lines whose expression part contains an
/// extra '=' do not count.
pub fn parse_final_answer(response: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"^\s*Final Answer\s*:\s*([^=]+?)\s*=\s*24\s*$").expect("valid regex")
    });
    response
        .lines()
        .rev()
        .find_map(|line| re.captures(line))
        .map(|c| c[1].to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::solve_restricted;
    use crate::repository::Case;

    fn puzzle(nums: [i64; 4]) -> Puzzle {
        Puzzle::new(nums).unwrap()
    }

    fn case_for(nums: [i64; 4]) -> Case {
        let p = puzzle(nums);
        let solutions = solve_restricted(&p);
        Case {
            id: p.id(),
            puzzle: p,
            image_path: format!("images/{}.pgm", p.id()),
            solutions,
            results: Vec::new(),
            features: None,
            latent: None,
        }
    }

    #[test]
    fn nc_question_block() {
        let b = build_query(&puzzle([1, 3, 7, 12]), QueryKind::NoContext, None).unwrap();
        assert_eq!(
            b.user,
            "START QUESTION\nSolve the following Math-24 puzzle: \n1 3 7 12\nEND QUESTION"
        );
        assert!(b.tips.is_empty());
    }

    #[test]
    fn gc_appends_general_plan() {
        let b = build_query(&puzzle([1, 3, 7, 12]), QueryKind::GeneralContext, None).unwrap();
        assert_eq!(
            b.user,
            "START QUESTION\nSolve the following Math-24 puzzle:\n1 3 7 12\nEND QUESTION\n\n\
             START CONTEXT\nTo help you answer the question, below is a tip that may help:\n\
             a) use a pair of numbers to make 24, 12, 8 or 6\n\
             b) use the remaining pair of numbers to make 1, 2, 3 or 4 respectively\n\
             c) then the product of step a) and step b) equals 24\nEND CONTEXT"
        );
    }

    #[test]
    fn tc_lays_out_one_tip_per_solution() {
        let b = build_query(
            &puzzle([1, 3, 7, 12]),
            QueryKind::TopContext,
            Some(&case_for([1, 3, 6, 7])),
        )
        .unwrap();
        assert_eq!(
            b.user,
            "START QUESTION\nSolve the following Math-24 puzzle:\n1 3 7 12\nEND QUESTION\n\n\
             START CONTEXT\nTo help you answer the question, below is a tip that may help:\n\
             a) use the pair (1, 7) to make 6. If this is impossible, try to make 6 using some other pair\n\
             b) then use the remaining pair to make 4\n\
             c) then 6 * 4 = 24\n\
             OR\n\
             a) use the pair (1, 12) to make 8. If this is impossible, try to make 8 using some other pair\n\
             b) then use the remaining pair to make 3\n\
             c) then 8 * 3 = 24\nEND CONTEXT"
        );
        assert_eq!(
            b.tips,
            vec![
                Tip { pair: (1, 7), large: 6, small: 4 },
                Tip { pair: (1, 12), large: 8, small: 3 },
            ]
        );
    }

    #[test]
    fn tc_without_case_fails() {
        assert_eq!(
            build_query(&puzzle([1, 3, 7, 12]), QueryKind::TopContext, None),
            Err(QueryError::MissingRetrievedCase)
        );
    }

    #[test]
    fn tip_admissibility_on_the_worked_example() {
        let test = puzzle([1, 3, 7, 12]);
        // make 6, remainder makes 4: 7 - 1 = 6 and 12 / 3 = 4
        assert!(tip_admits_solution(&test, &Tip { pair: (1, 7), large: 6, small: 4 }));
        // make 8, remainder makes 3: 7 + 1 = 8 but (3, 12) cannot make 3
        assert!(!tip_admits_solution(&test, &Tip { pair: (1, 12), large: 8, small: 3 }));
    }

    #[test]
    fn tip_admissibility_allows_repeated_numbers() {
        // (3 * 4) * (1 + 1) executes the {2,12} plan even though both
        // remaining numbers are 1
        let test = puzzle([1, 1, 3, 4]);
        assert!(tip_admits_solution(&test, &Tip { pair: (3, 4), large: 12, small: 2 }));
    }

    #[test]
    fn parse_final_answer_examples() {
        assert_eq!(
            parse_final_answer("thinking...\nFinal Answer: (13 + 9 + 2) * 1 = 24"),
            Some("(13 + 9 + 2) * 1".to_string())
        );
        assert_eq!(
            parse_final_answer("Final Answer: (13+9+2)=24; 24*1=24"),
            None
        );
        assert_eq!(
            parse_final_answer("Final Answer: (13 + 9 + 2) = 24"),
            Some("(13 + 9 + 2)".to_string())
        );
        assert_eq!(parse_final_answer("no solution exists"), None);
        // the last matching line wins
        assert_eq!(
            parse_final_answer("Final Answer: 1 + 2 = 24\nwait\nFinal Answer: 4 * 6 = 24"),
            Some("4 * 6".to_string())
        );
        // tolerant of surrounding whitespace
        assert_eq!(
            parse_final_answer("  Final Answer:  6 * 4  =  24  "),
            Some("6 * 4".to_string())
        );
        // must end the line with = 24
        assert_eq!(parse_final_answer("Final Answer: 6 * 4 = 24."), None);
    }
}
