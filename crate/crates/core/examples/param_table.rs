//! Exact per-layer parameter counts of the full-size networks.
//!
//! ```bash
//! cargo run --release --example param_table
//! ```

use finemotion::netspec::{build, count_params, format_count, Geometry, ModelKind};

fn main() -> finemotion::Result<()> {
    for kind in [ModelKind::Sf, ModelKind::Mf, ModelKind::Cbmf] {
        let report = count_params(&build(kind, Geometry::full_size())?)?;
        println!("{} ({} parameters)", kind.label(), report.total);
        for layer in report.layers.iter().filter(|l| l.params > 0) {
            println!("  {:<12} {:>12} {:>10}  {:?}", layer.name, layer.params, format_count(layer.params), layer.output_shape);
        }
    }
    Ok(())
}
