use onerestore::network::{param_breakdown, NetConfig, RestoreNet};
use onerestore::numerics::ParamStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (name, cfg) in [("paper", NetConfig::paper()), ("desk", NetConfig::desk())] {
        let mut store = ParamStore::<f32>::new();
        RestoreNet::new(cfg, &mut store, 0)?;
        println!("{name}: {} trainable parameters", store.num_trainable());
        for (module, count) in param_breakdown(&store) {
            println!("  {module:<8} {count:>9}");
        }
    }
    Ok(())
}
