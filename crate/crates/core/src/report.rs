//! Plain-text result files.

use std::fmt::Write;

use crate::training::{CurvePoint, MatrixTables};

pub const CURVE_HEADER: &str = "step,mean_return,std_return,loss_td,loss_jt,epsilon";

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for p in curve {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            p.step, p.mean_return, p.std_return, p.loss_td, p.loss_jt, p.epsilon
        );
    }
    out
}

fn action_label(a: usize) -> String {
    if a < 26 {
        char::from(b'A' + a as u8).to_string()
    } else {
        format!("a{a}")
    }
}

/// One |A|x|A| grid: the row header is agent 0's Q value, the column header
/// agent 1's, cells hold the joint value. Greedy entries are marked with `*`.
fn grid(out: &mut String, title: &str, tables: &MatrixTables, cells: &[f64]) {
    let n = tables.n_actions;
    let (qa, qb) = (&tables.agent_q[0], &tables.agent_q[1]);
    let mark = |hit: bool| if hit { "*" } else { " " };
    let _ = writeln!(out, "{title}");
    let _ = write!(out, "{:>12}", "A \\ B");
    for (j, q) in qb.iter().enumerate() {
        let _ = write!(out, " {:>10.3}{}", q, mark(j == tables.greedy[1]));
    }
    out.push('\n');
    for (i, q) in qa.iter().enumerate() {
        let _ = write!(out, "{:>11.3}{}", q, mark(i == tables.greedy[0]));
        for j in 0..n {
            let greedy = i == tables.greedy[0] && j == tables.greedy[1];
            let _ = write!(out, " {:>10.3}{}", cells[i * n + j], mark(greedy));
        }
        out.push('\n');
    }
    out.push('\n');
}

/// Payoff-style dump of the learned values of a matrix game.
pub fn final_tables(tables: &MatrixTables) -> String {
    let mut out = String::new();
    for (i, q) in tables.agent_q.iter().enumerate() {
        let values: Vec<String> = q.iter().map(|v| format!("{v:.3}")).collect();
        let _ = writeln!(out, "Q_{} = [{}]", i, values.join(", "));
    }
    let greedy: Vec<String> = tables.greedy.iter().map(|&a| action_label(a)).collect();
    let _ = writeln!(out, "greedy joint action = ({})", greedy.join(","));
    out.push('\n');
    if tables.agent_q.len() == 2 {
        grid(&mut out, "Q_jt", tables, &tables.q_jt);
        if let Some(q_hat) = &tables.q_hat {
            grid(&mut out, "Q_hat_jt", tables, q_hat);
        }
    } else {
        let joints = crate::env::enumerate_joint_actions(tables.agent_q.len(), tables.n_actions)
            .unwrap_or_default();
        let _ = writeln!(out, "joint_action,q_jt,q_hat_jt");
        for (k, a) in joints.iter().enumerate() {
            let label: Vec<String> = a.iter().map(|&x| action_label(x)).collect();
            let hat = tables
                .q_hat
                .as_ref()
                .map_or_else(String::new, |h| format!("{:.3}", h[k]));
            let _ = writeln!(out, "{},{:.3},{}", label.join(""), tables.q_jt[k], hat);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_rows() {
        let curve = vec![
            CurvePoint {
                step: 0,
                mean_return: -1.0,
                std_return: 0.0,
                loss_td: 0.0,
                loss_jt: 0.0,
                epsilon: 1.0,
            };
            3
        ];
        let text = curve_csv(&curve);
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap(), CURVE_HEADER);
        assert_eq!(text.lines().nth(1).unwrap(), "0,-1.000000,0.000000,0.000000,0.000000,1.000000");
    }

    #[test]
    fn table_layout_has_headers_and_marks() {
        let t = MatrixTables {
            n_actions: 3,
            agent_q: vec![vec![3.483, 2.65, 2.654], vec![4.47, 3.317, 3.318]],
            q_jt: vec![7.935, 6.8, 6.81, 7.12, 5.967, 5.968, 7.124, 5.971, 5.972],
            q_hat: Some(vec![8.0; 9]),
            greedy: vec![0, 0],
        };
        let text = final_tables(&t);
        assert!(text.contains("Q_0 = [3.483, 2.650, 2.654]"));
        assert!(text.contains("greedy joint action = (A,A)"));
        assert!(text.contains("7.935*"));
        assert!(text.contains("4.470*"));
        assert!(text.contains("Q_hat_jt"));
        let q_jt_rows: Vec<&str> = text
            .split("Q_jt\n")
            .nth(1)
            .unwrap()
            .lines()
            .take_while(|l| !l.is_empty())
            .collect();
        assert_eq!(q_jt_rows.len(), 4);
    }
}
