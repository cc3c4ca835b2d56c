use proptest::prelude::*;
use tsclust::data::{
    destandardize, fit_standardizer, read_csv, split_history_horizon, standardize, write_csv, SplitSpec, TimeGrid,
    TimeSeriesSet,
};

/// `m` individuals, `d` dims, `t` steps with a random observation mask.
fn dataset() -> impl Strategy<Value = TimeSeriesSet<f64>> {
    (2usize..6, 1usize..3, 2usize..8).prop_flat_map(|(m, d, t)| {
        let n = m * d * t;
        (
            proptest::collection::vec(-100f64..100.0, n),
            proptest::collection::vec(prop::bool::weighted(0.8), n),
        )
            .prop_map(move |(values, mask)| {
                let ids = (0..m).map(|i| format!("p{i}")).collect();
                let dims = (0..d).map(|j| format!("x{j}")).collect();
                TimeSeriesSet::new(ids, dims, TimeGrid::range(1, t).unwrap(), values, mask).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn standardize_round_trips(data in dataset()) {
        let Ok(params) = fit_standardizer(&data) else { return Ok(()) };
        let z = standardize(&data, &params).unwrap();
        let back = destandardize(&z, &params).unwrap();
        for i in 0..data.n_individuals() {
            for j in 0..data.n_dims() {
                prop_assert_eq!(back.series_mask(i, j), data.series_mask(i, j));
                for t in 0..data.grid().len() {
                    if data.is_observed(i, j, t) {
                        let (a, b) = (back.value(i, j, t), data.value(i, j, t));
                        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn standardized_training_dims_are_centered(data in dataset()) {
        let Ok(params) = fit_standardizer(&data) else { return Ok(()) };
        let z = standardize(&data, &params).unwrap();
        let again = fit_standardizer(&z).unwrap();
        for j in 0..data.n_dims() {
            prop_assert!(again.mean[j].abs() < 1e-9);
            prop_assert!((again.std[j] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn split_concatenates_to_the_prefix(data in dataset(), h in 1usize..8, f in 1usize..8) {
        let t = data.grid().len();
        let spec = SplitSpec::new(h, f).unwrap();
        match split_history_horizon(&data, spec) {
            Err(_) => prop_assert!(h + f > t),
            Ok((hist, fut)) => {
                prop_assert!(h + f <= t);
                prop_assert_eq!(hist.grid().points(), &data.grid().points()[..h]);
                prop_assert_eq!(fut.grid().points(), &data.grid().points()[h..h + f]);
                for i in 0..data.n_individuals() {
                    for j in 0..data.n_dims() {
                        let joined: Vec<f64> = hist.series(i, j).iter().chain(fut.series(i, j)).copied().collect();
                        prop_assert_eq!(&joined[..], &data.series(i, j)[..h + f]);
                        let mask: Vec<bool> = hist.series_mask(i, j).iter().chain(fut.series_mask(i, j)).copied().collect();
                        prop_assert_eq!(&mask[..], &data.series_mask(i, j)[..h + f]);
                    }
                }
            }
        }
    }

    #[test]
    fn csv_round_trip_keeps_observed_cells(data in dataset()) {
        let mut buf = Vec::new();
        write_csv(&data, &mut buf).unwrap();
        let Ok(back) = read_csv::<f64, _>(buf.as_slice()) else {
            // Nothing observed at all.
            prop_assert!(!data.series_mask(0, 0).iter().any(|&m| m) || data.n_individuals() == 0);
            return Ok(());
        };
        let back = back.data;
        for (bi, id) in back.individual_ids().iter().enumerate() {
            let i = data.individual_ids().iter().position(|x| x == id).unwrap();
            for (bj, name) in back.dim_names().iter().enumerate() {
                let j = data.dim_names().iter().position(|x| x == name).unwrap();
                for (bt, &time) in back.grid().points().iter().enumerate() {
                    let t = data.grid().position(time).unwrap();
                    prop_assert_eq!(back.is_observed(bi, bj, bt), data.is_observed(i, j, t));
                    if data.is_observed(i, j, t) {
                        prop_assert_eq!(back.value(bi, bj, bt), data.value(i, j, t));
                    }
                }
            }
        }
    }
}

#[test]
fn split_rejects_zero_lengths() {
    assert!(SplitSpec::new(0, 2).is_err());
    assert!(SplitSpec::new(2, 0).is_err());
}
