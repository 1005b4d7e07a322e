//! Trajectory renderings: ASCII grids with `^ v > <` action arrows and
//! 0-indexed step numbers, plus a minimal SVG output.

use crate::data::Trajectory;
use crate::gridworld::{CellKind, GridAction, GridLayout, GridState};

/// ASCII grid for one trajectory. Each visited cell shows the arrow of the
/// action taken there and the 0-indexed step number of the first visit; the
/// query state is marked with `*`.
pub fn render_ascii(layout: &GridLayout, traj: &Trajectory, query: &GridState) -> String {
    let mut visits: Vec<Option<(GridAction, usize)>> = vec![None; layout.n_cells()];
    for (step_idx, step) in traj.steps.iter().enumerate() {
        if visits[step.obs].is_none() {
            if let Ok(a) = GridAction::from_id(step.action) {
                visits[step.obs] = Some((a, step_idx));
            }
        }
    }
    let query_idx = layout.cell_index(query.row, query.col);

    let mut out = String::new();
    for row in 0..layout.height() {
        let mut line = String::new();
        for col in 0..layout.width() {
            let idx = layout.cell_index(row, col);
            let cell = match (visits[idx], layout.cell(row, col)) {
                (Some((a, t)), _) => format!("{}{:<3}", a.arrow(), t),
                (None, CellKind::Wall) => "####".into(),
                (None, CellKind::Goal) => "G   ".into(),
                (None, CellKind::Lava) => "L   ".into(),
                (None, CellKind::Empty) if idx == query_idx => "*   ".into(),
                (None, CellKind::Empty) => ".   ".into(),
            };
            line.push_str(&cell);
            line.push(' ');
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

const SVG_CELL: usize = 40;

/// Stand-alone SVG with one rect per cell and arrow glyphs with step
/// numbers in the visited cells.
pub fn render_svg(layout: &GridLayout, traj: &Trajectory, query: &GridState) -> String {
    let w = layout.width() * SVG_CELL;
    let h = layout.height() * SVG_CELL;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"monospace\">\n"
    );
    for row in 0..layout.height() {
        for col in 0..layout.width() {
            let fill = match layout.cell(row, col) {
                CellKind::Empty => "#ffffff",
                CellKind::Wall => "#888888",
                CellKind::Goal => "#7ac87a",
                CellKind::Lava => "#d96459",
            };
            out.push_str(&format!(
                "  <rect x=\"{}\" y=\"{}\" width=\"{SVG_CELL}\" height=\"{SVG_CELL}\" \
                 fill=\"{fill}\" stroke=\"#333333\"/>\n",
                col * SVG_CELL,
                row * SVG_CELL,
            ));
        }
    }
    out.push_str(&format!(
        "  <rect x=\"{}\" y=\"{}\" width=\"{SVG_CELL}\" height=\"{SVG_CELL}\" fill=\"none\" \
         stroke=\"#1f5fbf\" stroke-width=\"3\"/>\n",
        query.col * SVG_CELL,
        query.row * SVG_CELL,
    ));
    let mut seen = vec![false; layout.n_cells()];
    for (step_idx, step) in traj.steps.iter().enumerate() {
        if seen[step.obs] {
            continue;
        }
        seen[step.obs] = true;
        let arrow = GridAction::from_id(step.action).map(|a| a.arrow()).unwrap_or('?');
        let glyph = match arrow {
            '<' => "&lt;".to_string(),
            '>' => "&gt;".to_string(),
            c => c.to_string(),
        };
        let (row, col) = (step.obs / layout.width(), step.obs % layout.width());
        out.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\">{glyph}{step_idx}</text>\n",
            col * SVG_CELL + SVG_CELL / 2,
            row * SVG_CELL + SVG_CELL / 2 + 5,
        ));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Step;
    use crate::gridworld::DEFAULT_LAYOUT;

    fn sample() -> (GridLayout, Trajectory) {
        let layout = GridLayout::parse(DEFAULT_LAYOUT).unwrap();
        let traj = Trajectory {
            id: 0,
            steps: vec![
                Step { obs: layout.cell_index(0, 0), action: 1, reward: -0.1 },
                Step { obs: layout.cell_index(1, 0), action: 3, reward: -0.1 },
                Step { obs: layout.cell_index(1, 1), action: 3, reward: -0.1 },
            ],
        };
        (layout, traj)
    }

    #[test]
    fn ascii_marks_actions_walls_and_query() {
        let (layout, traj) = sample();
        let query = layout.state_at(3, 5).unwrap();
        let text = render_ascii(&layout, &traj, &query);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[0].starts_with("v0"), "line: {}", lines[0]);
        assert!(lines[1].contains(">1") && lines[1].contains(">2"));
        assert!(lines[0].contains("####"));
        assert!(lines[0].contains('G'));
        assert!(lines[2].contains('L'));
        assert!(lines[3].contains('*'));
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let (layout, traj) = sample();
        let query = layout.state_at(1, 1).unwrap();
        let svg = render_svg(&layout, &traj, &query);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 49 + 1);
        assert!(svg.contains("&gt;1"));
        assert!(!svg.contains(">1<tex"), "raw angle bracket leaked into text");
    }
}
