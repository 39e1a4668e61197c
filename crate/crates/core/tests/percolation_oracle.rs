mod common;

use common::{bfs, same_partition};
use pamlab::percolation::{level_set_components, snapshot_profile, LevelSetSweep};
use pamlab::{FieldSnapshot, Lattice};
use proptest::prelude::*;

fn snapshot_strategy(d: usize, l: usize) -> impl Strategy<Value = FieldSnapshot> {
    let n = l.pow(d as u32);
    proptest::collection::vec(0u8..4, n).prop_map(move |v| {
        FieldSnapshot::new(Lattice::new(d, l).unwrap(), v.into_iter().map(f64::from).collect()).unwrap()
    })
}

proptest! {
    #[test]
    fn union_find_matches_bfs_2d(s in snapshot_strategy(2, 9), alpha in 0u8..4) {
        let a = f64::from(alpha);
        let r = level_set_components(&s, a);
        let (sizes, spanning, labels) = bfs(&s, a);
        prop_assert_eq!(&r.sizes, &sizes);
        prop_assert_eq!(r.spanning, spanning);
        let mut sw = LevelSetSweep::new(&s);
        sw.advance_to(a);
        prop_assert!(same_partition(&sw.labels(), &labels));
    }

    #[test]
    fn union_find_matches_bfs_3d(s in snapshot_strategy(3, 4), alpha in 0u8..4) {
        let a = f64::from(alpha);
        let r = level_set_components(&s, a);
        let (sizes, spanning, _) = bfs(&s, a);
        prop_assert_eq!(r.sizes, sizes);
        prop_assert_eq!(r.spanning, spanning);
    }

    #[test]
    fn profile_is_nested(s in snapshot_strategy(2, 8)) {
        let grid = [0.0, 1.0, 2.0, 3.0];
        let p = snapshot_profile(&s, &grid).unwrap();
        for w in p.reports.windows(2) {
            prop_assert!(w[0].largest_fraction <= w[1].largest_fraction);
            prop_assert!(w[0].occupied() <= w[1].occupied());
            prop_assert!(!w[0].spanning || w[1].spanning);
        }
        let mut sw = LevelSetSweep::new(&s);
        sw.advance_to(grid[0]);
        let mut prev = sw.labels();
        for &a in &grid[1..] {
            sw.advance_to(a);
            let cur = sw.labels();
            let mut image = std::collections::HashMap::new();
            for (p, c) in prev.iter().zip(&cur) {
                if let Some(p) = p {
                    let c = c.expect("level sets are nested");
                    prop_assert_eq!(*image.entry(*p).or_insert(c), c);
                }
            }
            prev = cur;
        }
    }
}
