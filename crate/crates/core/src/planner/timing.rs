//! Clamped cubic spline time parameterization with iterative duration
//! scaling.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::kinematics::{ArmModel, JointConfig, JOINTS};

/// Interior samples per segment used when checking limits.
pub const TIMING_SAMPLES: usize = 100;

const MIN_SEGMENT: f64 = 0.01;
const SCALE: f64 = 1.1;
const MAX_ROUNDS: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub t: f64,
    pub q: JointConfig,
    pub qd: [f64; JOINTS],
    pub qdd: [f64; JOINTS],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimedTrajectory {
    pub knots: Vec<Knot>,
}

impl TimedTrajectory {
    pub fn duration(&self) -> f64 {
        self.knots.last().map_or(0.0, |k| k.t)
    }

    pub fn start(&self) -> Option<&JointConfig> {
        self.knots.first().map(|k| &k.q)
    }

    pub fn end(&self) -> Option<&JointConfig> {
        self.knots.last().map(|k| &k.q)
    }

    /// Position, velocity and acceleration at time `t` (clamped to the
    /// trajectory's span).
    pub fn sample(&self, t: f64) -> (JointConfig, [f64; JOINTS], [f64; JOINTS]) {
        let Some(last) = self.knots.last() else {
            return (JointConfig::ZERO, [0.0; JOINTS], [0.0; JOINTS]);
        };
        if self.knots.len() == 1 || t >= last.t {
            return (last.q, last.qd, last.qdd);
        }
        let t = t.max(0.0);
        let i = self.knots.partition_point(|k| k.t <= t).saturating_sub(1).min(self.knots.len() - 2);
        let (a, b) = (&self.knots[i], &self.knots[i + 1]);
        let mut q = JointConfig::ZERO;
        let mut qd = [0.0; JOINTS];
        let mut qdd = [0.0; JOINTS];
        for j in 0..JOINTS {
            (q[j], qd[j], qdd[j]) = eval(a.t, b.t, a.q[j], b.q[j], a.qdd[j], b.qdd[j], t);
        }
        (q, qd, qdd)
    }

    /// Rows `t,q1..q6,qd1..qd6,qdd1..qdd6`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for prefix in ["q", "qd", "qdd"] {
            header.extend((1..=JOINTS).map(|j| format!("{prefix}{j}")));
        }
        w.write_record(&header)?;
        for k in &self.knots {
            let mut row = vec![format!("{:.6}", k.t)];
            row.extend(k.q.iter().map(|v| format!("{v:.9}")));
            row.extend(k.qd.iter().map(|v| format!("{v:.9}")));
            row.extend(k.qdd.iter().map(|v| format!("{v:.9}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Appends `other`, shifting its times; the shared endpoint is merged.
    pub fn append(&mut self, other: &TimedTrajectory) {
        let offset = self.duration();
        let skip = usize::from(!self.knots.is_empty());
        self.knots.extend(other.knots.iter().skip(skip).map(|k| Knot { t: k.t + offset, ..*k }));
    }
}

/// Cubic segment on `[t0, t1]` from end values and second derivatives.
fn eval(t0: f64, t1: f64, y0: f64, y1: f64, m0: f64, m1: f64, t: f64) -> (f64, f64, f64) {
    let h = t1 - t0;
    let (a, b) = (t1 - t, t - t0);
    let c0 = y0 / h - m0 * h / 6.0;
    let c1 = y1 / h - m1 * h / 6.0;
    let q = m0 * a.powi(3) / (6.0 * h) + m1 * b.powi(3) / (6.0 * h) + c0 * a + c1 * b;
    let qd = -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) - c0 + c1;
    let qdd = (m0 * a + m1 * b) / h;
    (q, qd, qdd)
}

/// Second derivatives of the clamped (zero end slope) spline through
/// `(t[i], y[i])`, by the Thomas algorithm.
fn clamped_second_derivatives(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let slope: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    diag[0] = 2.0 * h[0];
    upper[0] = h[0];
    rhs[0] = 6.0 * slope[0];
    for i in 1..n - 1 {
        lower[i] = h[i - 1];
        diag[i] = 2.0 * (h[i - 1] + h[i]);
        upper[i] = h[i];
        rhs[i] = 6.0 * (slope[i] - slope[i - 1]);
    }
    lower[n - 1] = h[n - 2];
    diag[n - 1] = 2.0 * h[n - 2];
    rhs[n - 1] = -6.0 * slope[n - 2];

    for i in 1..n {
        let w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    let mut m = vec![0.0; n];
    m[n - 1] = rhs[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        m[i] = (rhs[i] - upper[i] * m[i + 1]) / diag[i];
    }
    m
}

fn build(path: &[JointConfig], durations: &[f64]) -> TimedTrajectory {
    let mut times = Vec::with_capacity(path.len());
    let mut t = 0.0;
    times.push(t);
    for d in durations {
        t += d;
        times.push(t);
    }
    let mut knots: Vec<Knot> = path
        .iter()
        .zip(&times)
        .map(|(q, &t)| Knot {
            t,
            q: *q,
            qd: [0.0; JOINTS],
            qdd: [0.0; JOINTS],
        })
        .collect();
    for j in 0..JOINTS {
        let y: Vec<f64> = path.iter().map(|q| q[j]).collect();
        let m = clamped_second_derivatives(&times, &y);
        for i in 0..knots.len() {
            knots[i].qdd[j] = m[i];
            knots[i].qd[j] = if i == 0 || i + 1 == knots.len() {
                0.0
            } else {
                eval(times[i], times[i + 1], y[i], y[i + 1], m[i], m[i + 1], times[i]).1
            };
        }
    }
    TimedTrajectory { knots }
}

/// Largest ratio of |velocity| or |acceleration| to its limit over the
/// knots, `TIMING_SAMPLES` interior points per segment and each segment's
/// velocity extremum.
pub fn limit_ratio(traj: &TimedTrajectory, arm: &ArmModel) -> f64 {
    let mut worst: f64 = 0.0;
    for pair in traj.knots.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let h = b.t - a.t;
        for j in 0..JOINTS {
            let (vl, al) = (arm.velocity_limits[j], arm.acceleration_limits[j]);
            let mut check = |t: f64| {
                let (_, v, acc) = eval(a.t, b.t, a.q[j], b.q[j], a.qdd[j], b.qdd[j], t);
                worst = worst.max(v.abs() / vl).max(acc.abs() / al);
            };
            for k in 0..=TIMING_SAMPLES + 1 {
                check(a.t + h * k as f64 / (TIMING_SAMPLES + 1) as f64);
            }
            let (m0, m1) = (a.qdd[j], b.qdd[j]);
            if m0 * m1 < 0.0 {
                check(a.t + h * m0 / (m0 - m1));
            }
        }
    }
    worst
}

/// Times a geometric path so that joint velocity and acceleration limits
/// hold along the whole spline.
pub fn time_parameterize(path: &[JointConfig], arm: &ArmModel) -> TimedTrajectory {
    match path.len() {
        0 => return TimedTrajectory::default(),
        1 => {
            return TimedTrajectory {
                knots: vec![Knot {
                    t: 0.0,
                    q: path[0],
                    qd: [0.0; JOINTS],
                    qdd: [0.0; JOINTS],
                }],
            }
        }
        _ => {}
    }
    let mut durations: Vec<f64> = path
        .windows(2)
        .map(|w| {
            (0..JOINTS)
                .map(|j| (w[1][j] - w[0][j]).abs() / arm.velocity_limits[j])
                .fold(MIN_SEGMENT, f64::max)
        })
        .collect();
    let mut traj = build(path, &durations);
    for _ in 0..MAX_ROUNDS {
        if limit_ratio(&traj, arm) <= 1.0 {
            break;
        }
        for d in &mut durations {
            *d *= SCALE;
        }
        traj = build(path, &durations);
    }
    traj
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use proptest::prelude::*;

    fn arm() -> ArmModel {
        ArmModel::ur10(Pose::identity())
    }

    #[test]
    fn single_waypoint() {
        let t = time_parameterize(&[JointConfig([0.3; 6])], &arm());
        assert_eq!(t.knots.len(), 1);
        assert_eq!(t.knots[0].t, 0.0);
        assert_eq!(t.knots[0].qd, [0.0; 6]);
    }

    #[test]
    fn two_waypoint_one_radian_move() {
        let a = JointConfig::ZERO;
        let mut b = a;
        b[2] = 1.0;
        let t = time_parameterize(&[a, b], &arm());
        // A rest-to-rest cubic over T peaks at 1.5/T velocity and 6/T^2
        // acceleration, so the fastest admissible T is sqrt(6/4).
        let analytic = (6.0f64 / 4.0).sqrt();
        assert!(t.duration() >= analytic.max(0.5));
        let expected = 0.5 * 1.1f64.powi(10);
        assert!((t.duration() - expected).abs() < 1e-12, "{}", t.duration());
        let n = 10_000;
        for k in 0..=n {
            let (_, v, acc) = t.sample(t.duration() * k as f64 / n as f64);
            assert!(v[2].abs() <= 2.0 + 1e-9 && acc[2].abs() <= 4.0 + 1e-9);
        }
        assert_eq!(t.sample(t.duration()).0, b);
    }

    #[test]
    fn spline_interpolates_and_is_c2() {
        let path: Vec<JointConfig> = (0..6)
            .map(|i| JointConfig(std::array::from_fn(|j| ((i * 7 + j * 3) % 5) as f64 * 0.2 - 0.4)))
            .collect();
        let traj = time_parameterize(&path, &arm());
        for (k, q) in traj.knots.iter().zip(&path) {
            assert_eq!(&k.q, q);
        }
        for i in 1..traj.knots.len() - 1 {
            let t = traj.knots[i].t;
            let (ql, vl, al) = traj.sample(t - 1e-7);
            let (qr, vr, ar) = traj.sample(t + 1e-7);
            for j in 0..6 {
                assert!((ql[j] - qr[j]).abs() < 1e-5);
                assert!((vl[j] - vr[j]).abs() < 1e-4);
                assert!((al[j] - ar[j]).abs() < 1e-3);
                assert!((traj.knots[i].qd[j] - vr[j]).abs() < 1e-4);
            }
        }
        assert_eq!(traj.knots[0].qd, [0.0; 6]);
        assert_eq!(traj.knots.last().unwrap().qd, [0.0; 6]);
    }

    #[test]
    fn deterministic() {
        let path = [JointConfig::ZERO, JointConfig([0.5; 6]), JointConfig([0.2, 1.0, -0.3, 0.0, 0.1, 0.4])];
        assert_eq!(time_parameterize(&path, &arm()), time_parameterize(&path, &arm()));
    }

    #[test]
    fn csv_layout() {
        let t = time_parameterize(&[JointConfig::ZERO, JointConfig([0.1; 6])], &arm());
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("t,q1,q2,q3,q4,q5,q6,qd1,"));
        assert_eq!(header.split(',').count(), 19);
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn append_merges_shared_endpoint() {
        let a = time_parameterize(&[JointConfig::ZERO, JointConfig([0.1; 6])], &arm());
        let b = time_parameterize(&[JointConfig([0.1; 6]), JointConfig([0.3; 6])], &arm());
        let mut joined = a.clone();
        joined.append(&b);
        assert_eq!(joined.knots.len(), 3);
        assert!((joined.duration() - (a.duration() + b.duration())).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn limits_hold_on_dense_samples(
            pts in proptest::collection::vec(proptest::array::uniform6(-3.0f64..3.0), 2..8)
        ) {
            let path: Vec<JointConfig> = pts.into_iter().map(JointConfig).collect();
            let arm = arm();
            let traj = time_parameterize(&path, &arm);
            prop_assert!(traj.knots.windows(2).all(|w| w[1].t > w[0].t));
            prop_assert_eq!(traj.start(), path.first());
            prop_assert_eq!(traj.end(), path.last());
            let n = 4000;
            for k in 0..=n {
                let (_, v, a) = traj.sample(traj.duration() * k as f64 / n as f64);
                for j in 0..6 {
                    prop_assert!(v[j].abs() <= arm.velocity_limits[j] + 1e-9);
                    prop_assert!(a[j].abs() <= arm.acceleration_limits[j] + 1e-9);
                }
            }
        }
    }
}
