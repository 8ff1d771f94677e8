use pathdual::dp::{HistKey, WalkTable};
use pathdual::{builtin_terminal, ExperimentParams, History, RngStream, ValueModel};
use rand::Rng;

fn brute_force(terminal: &[f64], start: usize, l: usize) -> f64 {
    let mut total = 0.0;
    for signs in 0u32..(1 << l) {
        let mut x = start;
        for j in 0..l {
            if x == 0 {
                break;
            }
            x = if signs >> j & 1 == 1 { x + 1 } else { x - 1 };
        }
        total += terminal[x];
    }
    total / f64::from(1u32 << l)
}

#[test]
fn start_row_matches_enumeration() {
    let mut rng = RngStream::new(41, 0).rng();
    for l in 1..=8 {
        for _ in 0..4 {
            let row: Vec<f64> = (0..l + 12).map(|_| rng.random_range(0.0..2.0)).collect();
            let table = WalkTable::from_terminal_row(0, HistKey::default(), 0.1, row.clone(), l, false);
            for x in 0..table.width(0) {
                let want = brute_force(&row, x, l);
                assert!((table.entry(x, 0) - want).abs() < 1e-12, "L={l} X={x}");
            }
        }
    }
}

#[test]
fn rows_satisfy_recursion_bit_for_bit() {
    let t = builtin_terminal("capped_max", 2.0, 2).unwrap();
    let params = ExperimentParams::derive(1.0, 2, 32, 0.05, 8, &t).unwrap();
    let model = ValueModel::new(t, params).unwrap();
    let hist = History::new(vec![1.1], vec![0.25]).unwrap();
    let table = model.build_walk_table(&hist).unwrap();
    for j in 0..table.l() {
        let (row, next) = (table.row(j), table.row(j + 1));
        assert_eq!(row.len() + 1, next.len());
        assert_eq!(row[0], next[0]);
        for x in 1..row.len() {
            assert_eq!(row[x], 0.5 * (next[x - 1] + next[x + 1]));
        }
    }
    assert!(table.row(0).iter().all(|v| (0.0..=2.0).contains(v)));
}

#[test]
fn table_at_time_one_is_flat_in_steps() {
    let t = builtin_terminal("capped_max", 2.0, 2).unwrap();
    let params = ExperimentParams::derive(1.0, 2, 16, 0.05, 4, &t).unwrap();
    let model = ValueModel::new(t, params).unwrap();
    let hist = History::new(vec![1.3], vec![1.0]).unwrap();
    let table = model.build_walk_table(&hist).unwrap();
    for j in 0..table.l() {
        assert_eq!(table.row(j), &table.row(j + 1)[..table.width(j)]);
    }
}

#[test]
fn rebuilt_model_reproduces_tables() {
    let t = builtin_terminal("capped_range", 2.0, 2).unwrap();
    let params = ExperimentParams::derive(1.0, 2, 16, 0.05, 4, &t).unwrap();
    let a = ValueModel::new(t.clone(), params).unwrap();
    let b = ValueModel::new(t, params).unwrap();
    let hist = History::new(vec![0.8], vec![0.5]).unwrap();
    a.build_walk_table(&History::empty()).unwrap();
    assert_eq!(a.build_walk_table(&hist).unwrap(), b.build_walk_table(&hist).unwrap());
    assert_eq!(a.eval_ue0().to_bits(), b.eval_ue0().to_bits());
}
