//! Data products read back from stored results. Nothing here computes a
//! statistic; every number comes out of the results tables.

mod km;
mod table;

pub use km::{km_plot_csv, render_km_plot_data, render_km_svg, KMPlotData, StratumPlot};
pub use table::{format_sig6, pivot_wide, render_table, Orientation, TableDocument};

fn csv_line(out: &mut String, fields: &[String]) {
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        crate::store::push_csv_field(out, f);
    }
    out.push('\n');
}
