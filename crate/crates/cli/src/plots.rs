//! Gnuplot scripts for the CSV artifacts. Each script reads its CSV from
//! the directory it lives in and writes a PNG next to it.

/// Heat map of the per-cell model error.
pub fn heatmap(csv: &str, labels: [&str; 2]) -> String {
    format!(
        "set datafile separator ','\n\
         set terminal pngcairo size 900,700\n\
         set output 'heatmap.png'\n\
         set xlabel '{x}'\n\
         set ylabel '{y}'\n\
         set cblabel 'error 2-norm'\n\
         set view map\n\
         set palette rgbformulae 33,13,10\n\
         plot '{csv}' skip 1 using 1:2:3 with image notitle\n",
        x = labels[0],
        y = labels[1],
    )
}

/// True vector field against the learned one.
pub fn phase(csv: &str, labels: [&str; 2]) -> String {
    format!(
        "set datafile separator ','\n\
         set terminal pngcairo size 900,700\n\
         set output 'phase.png'\n\
         set xlabel '{x}'\n\
         set ylabel '{y}'\n\
         s = 0.02\n\
         plot '{csv}' skip 1 using 1:2:($3*s):($4*s) with vectors lc rgb 'gray' title 'true', \\\n\
         \x20    '{csv}' skip 1 using 1:2:($5*s):($6*s) with vectors lc rgb 'red' title 'model'\n",
        x = labels[0],
        y = labels[1],
    )
}

/// Columns of the closed-loop log: `t`, states, inputs, predictions, error.
fn x_col(i: usize) -> usize {
    2 + i
}

/// Planar path through two state coordinates, or every state against time.
pub fn trajectory(csv: &str, n: usize, path_dims: Option<[usize; 2]>, goals: &[Vec<f64>]) -> String {
    let mut s =
        String::from("set datafile separator ','\nset terminal pngcairo size 900,700\nset output 'trajectory.png'\n");
    match path_dims {
        Some([a, b]) => {
            s += &format!("set xlabel 'x{a}'\nset ylabel 'x{b}'\nset size ratio -1\n");
            for (k, g) in goals.iter().enumerate() {
                s += &format!(
                    "set object {} circle at {},{} size 1 fc rgb 'green' fs transparent solid 0.15\n",
                    k + 1,
                    g[0],
                    g[1]
                );
            }
            s += &format!(
                "plot '{csv}' skip 1 using {}:{} with lines lw 2 title 'path'\n",
                x_col(a),
                x_col(b)
            );
        }
        None => {
            s += "set xlabel 't [s]'\n";
            let parts: Vec<String> = (0..n)
                .map(|i| format!("'{csv}' skip 1 using 1:{} with lines title 'x{i}'", x_col(i)))
                .collect();
            s += &format!("plot {}\n", parts.join(", \\\n     "));
        }
    }
    s
}

/// One state coordinate against time, with an optional symmetric band.
pub fn angle(csv: &str, dim: usize, band: Option<f64>) -> String {
    let mut s = format!(
        "set datafile separator ','\nset terminal pngcairo size 900,500\nset output 'angle.png'\n\
         set xlabel 't [s]'\nset ylabel 'x{dim} [rad]'\n"
    );
    match band {
        Some(b) => {
            s += &format!(
                "plot '{csv}' skip 1 using 1:{} with lines lw 2 title 'x{dim}', {b} dt 2 lc rgb 'black' notitle, -{b} dt 2 lc rgb 'black' notitle\n",
                x_col(dim)
            );
        }
        None => {
            s += &format!(
                "plot '{csv}' skip 1 using 1:{} with lines lw 2 title 'x{dim}'\n",
                x_col(dim)
            )
        }
    }
    s
}

/// One-step prediction error on a log scale.
pub fn one_step_error(csv: &str, n: usize, m: usize) -> String {
    format!(
        "set datafile separator ','\nset terminal pngcairo size 900,500\nset output 'one_step_error.png'\n\
         set xlabel 't [s]'\nset ylabel 'one-step error'\nset logscale y\n\
         plot '{csv}' skip 1 using 1:{} with lines title 'error'\n",
        2 + 2 * n + m
    )
}
