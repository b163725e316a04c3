use cotrain_core::config::CoTrainConfig;
use cotrain_core::cotrain::{self, RunOptions};
use cotrain_core::eval::EvalProtocol;
use cotrain_core::experiment::{cell_world, cycle_curve, evaluate_final, CellSpec, SimSetup, ViewMode};
use cotrain_core::simdet::{SimParams, WorldConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let params: SimParams = args.get(1).map(|j| serde_json::from_str(j).unwrap()).unwrap_or_default();
    let verbose = args.len() > 2;
    let pr = EvalProtocol::default();
    let (mut order, mut gap, mut rho, mut drift) = (0, 0, 0, 0);
    for seed in 0..10 {
        let mut res = Vec::new();
        for mode in [ViewMode::RgbD, ViewMode::RgbMirror] {
            let cell = CellSpec { name: String::new(), p: 5.0, mode, rho: None, seed: Some(seed) };
            let wc = cell_world(&WorldConfig::default(), &cell);
            let s = SimSetup::new(&wc, &params, 5.0).unwrap();
            let cfg = CoTrainConfig { view2_transform: wc.view2_transform, ..CoTrainConfig::default() };
            let out = cotrain::run(&s.backend, &s.split, &cfg, &RunOptions::default()).unwrap();
            let curve = cycle_curve(&s.backend, &s.split, s.truth(), &out.fresh_history, &pr).unwrap();
            let full = SimSetup::new(&wc, &params, 100.0).unwrap();
            let ub = evaluate_final(&full.backend, &full.split, None, full.truth(), &pr).unwrap().map;
            res.push((curve, ub));
        }
        let (curve, ub) = &res[0];
        let lb = curve[0].1;
        let co = curve.last().unwrap().1;
        let (mut max, mut worst) = (f64::MIN, 0.0f64);
        for (_, m) in &curve[1..] {
            max = max.max(*m);
            worst = worst.max(max - m);
        }
        order += (lb < co && co <= *ub) as i32;
        gap += ((co - lb) / (ub - lb) >= 0.5) as i32;
        rho += (co > res[1].0.last().unwrap().1) as i32;
        drift += (co >= curve[1].1 && worst <= 3.0) as i32;
        if verbose {
            let c: Vec<String> = curve.iter().map(|(_, m)| format!("{m:.1}")).collect();
            println!("seed {seed} ub {ub:.1} mirror {:.1} worst {worst:.2}: {}", res[1].0.last().unwrap().1, c.join(" "));
        }
    }
    println!("order {order}/10 gap {gap}/10 rho {rho}/10 nodrift {drift}/10");
}
