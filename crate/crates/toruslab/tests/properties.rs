//! Randomized property tests for the structural invariants the library
//! promises independent of any particular geometry: lattice-reduction
//! guarantees, norm monotonicity, serialization round-trips, and
//! configuration validation.

use nalgebra::Matrix3;
use proptest::prelude::*;
use proptest::strategy::ValueTree;

use toruslab::config::RunConfig;
use toruslab::lattice::{reduced_basis, successive_minima, LatticeGram};
use toruslab::mesh::{lp_norm, FourierTerm, MetricField, MetricSpec, PeriodicGrid};

const BALL_VOLUME: f64 = 4.0 / 3.0 * std::f64::consts::PI;

/// Random symmetric positive-definite matrix with bounded condition number,
/// so enumeration boxes stay small.
fn pd_matrix() -> impl Strategy<Value = Matrix3<f64>> {
    (
        proptest::array::uniform9(-1.0f64..1.0),
        0.5f64..2.0,
    )
        .prop_map(|(entries, scale)| {
            let a = Matrix3::from_row_slice(&entries);
            (a.transpose() * a + Matrix3::identity() * 0.3) * scale
        })
}

/// Random unimodular integer matrix built from a handful of shears and
/// swaps, keeping entries small enough to avoid norm overflow.
fn unimodular_matrix() -> impl Strategy<Value = Matrix3<i64>> {
    proptest::collection::vec((0usize..3, 0usize..3, -2i64..=2), 1..6).prop_map(|shears| {
        let mut u = Matrix3::<i64>::identity();
        for (row, col, amount) in shears {
            if row == col {
                continue;
            }
            // Left-multiply by the elementary shear E = I + amount * e_row e_col^T.
            let mut e = Matrix3::<i64>::identity();
            e[(row, col)] = amount;
            u = e * u;
        }
        u
    })
}

fn int_det(m: &Matrix3<i64>) -> i64 {
    m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
        - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
        + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Successive minima are sorted, attained by the reduced basis, and obey
    /// the Minkowski product bound.
    #[test]
    fn lattice_reduction_guarantees(q in pd_matrix()) {
        let gram = LatticeGram::new(q).unwrap();
        let minima = successive_minima(&gram).unwrap();
        let basis = reduced_basis(&gram).unwrap();

        prop_assert!(minima.values[0] <= minima.values[1] + 1e-12);
        prop_assert!(minima.values[1] <= minima.values[2] + 1e-12);
        for (j, v) in minima.vectors.iter().enumerate() {
            let attained = gram.norm_sq(*v).sqrt();
            prop_assert!((attained - minima.values[j]).abs() <= 1e-9 * attained);
        }
        prop_assert!(basis.unimodular);
        prop_assert!((basis.norms[0] - minima.values[0]).abs() <= 1e-9 * minima.values[0]);
        for j in 0..3 {
            let cap = 0.5 * (j as f64 + 1.0) * minima.values[j];
            prop_assert!(basis.norms[j] <= cap.max(minima.values[j]) * (1.0 + 1e-12));
        }
        let product: f64 = minima.values.iter().product();
        let bound = 8.0 / BALL_VOLUME * gram.determinant().sqrt();
        prop_assert!(product <= bound * (1.0 + 1e-12));
    }

    /// A unimodular change of basis leaves the successive minima unchanged:
    /// the lattice is the same set of points in a different coordinate frame.
    #[test]
    fn minima_are_basis_independent(q in pd_matrix(), u in unimodular_matrix()) {
        prop_assume!(int_det(&u).abs() == 1);
        let uf = u.map(|c| c as f64);
        let transformed = uf.transpose() * q * uf;
        let original = successive_minima(&LatticeGram::new(q).unwrap()).unwrap();
        let changed = successive_minima(&LatticeGram::new(transformed).unwrap()).unwrap();
        for j in 0..3 {
            let rel = (original.values[j] - changed.values[j]).abs() / original.values[j];
            prop_assert!(rel <= 1e-7, "minimum {j}: {} vs {}", original.values[j], changed.values[j]);
        }
    }

    /// On the unit-volume flat torus the p-norms are monotone in p, up to
    /// quadrature rounding.
    #[test]
    fn lp_norms_are_monotone_in_p(
        seed_values in proptest::collection::vec(-3.0f64..3.0, 64),
        p in 1.0f64..4.0,
        dq in 0.1f64..4.0,
    ) {
        let grid = PeriodicGrid::new(4).unwrap();
        let field = MetricField::build(grid, &MetricSpec::flat()).unwrap();
        let values = seed_values;
        let q = p + dq;
        let np = lp_norm(&field, &values, p, None).unwrap();
        let nq = lp_norm(&field, &values, q, None).unwrap();
        let nsup = lp_norm(&field, &values, f64::INFINITY, None).unwrap();
        prop_assert!(np <= nq * (1.0 + 1e-12) + 1e-300);
        prop_assert!(nq <= nsup * (1.0 + 1e-12) + 1e-300);
    }

    /// Metric specs survive a JSON round-trip bit-for-bit: re-parsed specs
    /// evaluate to exactly the same matrices.
    #[test]
    fn metric_spec_round_trips_through_json(
        base_seed in proptest::array::uniform9(-1.0f64..1.0),
        amps in proptest::collection::vec(
            (-0.2f64..0.2, -3i64..=3, -3i64..=3, -3i64..=3, 0.0f64..std::f64::consts::TAU),
            0..4,
        ),
        point in proptest::array::uniform3(0.0f64..1.0),
    ) {
        let a = Matrix3::from_row_slice(&base_seed);
        let base = a.transpose() * a + Matrix3::identity() * 0.5;
        let base_rows: [f64; 9] = std::array::from_fn(|i| base[(i / 3, i % 3)]);
        let spec = MetricSpec::Conformal {
            base: base_rows,
            terms: amps
                .into_iter()
                .map(|(amplitude, wx, wy, wz, phase)| FourierTerm {
                    amplitude,
                    wave: [wx, wy, wz],
                    phase,
                })
                .collect(),
        };
        let text = serde_json::to_string(&spec).unwrap();
        let back: MetricSpec = serde_json::from_str(&text).unwrap();
        let before = spec.eval(point).unwrap();
        let after = back.eval(point).unwrap();
        prop_assert_eq!(before, after);
        // A second cycle is a fixed point of the serialization.
        let text2 = serde_json::to_string(&back).unwrap();
        prop_assert_eq!(text, text2);
    }

    /// Config validation accepts exactly the strictly decreasing positive
    /// amplitude lists.
    #[test]
    fn eps_validation_requires_strict_decrease(
        steps in proptest::collection::vec(0.01f64..1.0, 1..6),
        break_at in proptest::option::of(0usize..5),
    ) {
        // Build a strictly decreasing list by cumulative subtraction.
        let mut eps = Vec::new();
        let mut level = 10.0;
        for s in &steps {
            eps.push(level);
            level -= *s;
        }
        let mut expect_ok = true;
        if let Some(i) = break_at {
            if i + 1 < eps.len() {
                eps[i + 1] = eps[i]; // introduce a tie, violating strictness
                expect_ok = false;
            }
        }
        let text = format!(
            r#"{{"grid": 4, "metric": {{"kind": "constant", "matrix": [1,0,0,0,1,0,0,0,1]}}, "eps": {eps:?}}}"#
        );
        let parsed = RunConfig::from_json(&text);
        prop_assert_eq!(parsed.is_ok(), expect_ok, "eps = {:?}", eps);
    }

    /// Vertex indexing is a bijection between flat indices and coordinates.
    #[test]
    fn grid_indexing_round_trips(n in 4usize..24, raw in 0usize..1_000_000) {
        let grid = PeriodicGrid::new(n).unwrap();
        let idx = raw % grid.vertex_count();
        let [i, j, k] = grid.coords(idx);
        prop_assert!(i < n && j < n && k < n);
        prop_assert_eq!(grid.index(i, j, k), idx);
        // Positions live on the h-lattice inside the unit cell.
        let pos = grid.position(idx);
        for (c, p) in [i, j, k].iter().zip(pos) {
            prop_assert!((p - *c as f64 * grid.h()).abs() < 1e-15);
        }
    }

    /// Stepping one full period along any axis returns to the same vertex.
    #[test]
    fn axis_loops_close_after_one_period(n in 4usize..16, raw in 0usize..1_000_000, axis in 0usize..3) {
        let grid = PeriodicGrid::new(n).unwrap();
        let start = raw % grid.vertex_count();
        let mut v = start;
        for _ in 0..n {
            v = grid.shift(v, axis, 1);
        }
        prop_assert_eq!(v, start);
        prop_assert_eq!(grid.shift(start, axis, n as i64), start);
        prop_assert_eq!(grid.shift(grid.shift(start, axis, 1), axis, -1), start);
    }
}

/// Keeps the unimodular-vector strategy honest: the generator must only
/// produce determinant plus-or-minus one matrices.
#[test]
fn shear_products_are_unimodular() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let strategy = unimodular_matrix();
    for _ in 0..200 {
        let tree = strategy.new_tree(&mut runner).unwrap();
        let u = tree.current();
        assert_eq!(int_det(&u).abs(), 1, "{u:?}");
    }
}
