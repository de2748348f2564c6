//! SE-only experiments.

use anyhow::{bail, Result};
use glmep::spectrum::{lorenz_compare, lorenz_curve, LorenzOrder, LORENZ_EPS};
use glmep::state_evolution::{
    informative_v_r, noise_sensitivity_slope, Monotonicity, StateEvolution, THRESHOLD_DELTA_HI,
};
use serde::{Deserialize, Serialize};

use super::Typed;
use crate::config::{FunctionSpec, SpectrumSpec};
use crate::output::{Outcome, RunContext};

pub fn monotonicity_name(m: Monotonicity) -> &'static str {
    match m {
        Monotonicity::Increasing => "increasing",
        Monotonicity::Decreasing => "decreasing",
        Monotonicity::NonMonotone => "non_monotone",
    }
}

pub fn lorenz_name(o: LorenzOrder) -> &'static str {
    match o {
        LorenzOrder::LessSpiky => "less_spiky",
        LorenzOrder::MoreSpiky => "more_spiky",
        LorenzOrder::Equivalent => "equivalent",
        LorenzOrder::Incomparable => "incomparable",
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GClassifyParams {
    pub f: FunctionSpec,
    pub delta: f64,
    pub grid: usize,
    /// increasing | decreasing | non_monotone
    pub expect: Option<String>,
}

impl Default for GClassifyParams {
    fn default() -> Self {
        Self { f: FunctionSpec::named("example3"), delta: 1.1, grid: 200, expect: Some("non_monotone".into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GRow {
    pub v_r: f64,
    pub g: f64,
}

pub struct GClassify;

impl Typed for GClassify {
    type Params = GClassifyParams;
    const NAME: &'static str = "g_classify";
    const ABOUT: &'static str = "shape of G(v_r) on (0, 1]";

    fn execute(&self, p: &GClassifyParams, ctx: &mut RunContext) -> Result<Outcome> {
        let f = p.f.build()?;
        let se = StateEvolution::shared(f.clone(), 0.0);
        let curve = se.g_curve(p.delta, p.grid)?;
        let verdict = monotonicity_name(se.classify_g(p.delta, p.grid)?);
        let rows: Vec<GRow> = curve.iter().map(|&(v_r, g)| GRow { v_r, g }).collect();
        for r in &rows {
            ctx.plot("g", r.v_r, r.g);
        }
        ctx.write_csv("g_curve.csv", &rows)?;
        let mut out = Outcome::default();
        out.note(format!("f = {}, delta = {}: G is {verdict}", f.name(), p.delta));
        if let Some(want) = &p.expect {
            out.check("verdict", verdict == want, format!("got {verdict}, expected {want}"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LorenzParams {
    pub spectrum1: SpectrumSpec,
    pub spectrum2: SpectrumSpec,
    pub delta: f64,
    pub grid: usize,
    pub expect: Option<String>,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            spectrum1: SpectrumSpec::geometric(20.0),
            spectrum2: SpectrumSpec::geometric(0.0),
            delta: 1.1,
            grid: 1000,
            expect: Some("more_spiky".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorenzRow {
    pub u: f64,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
}

/// Both curves on the same grid plus the order of the first against the second.
pub fn lorenz_table(
    s1: &SpectrumSpec,
    s2: &SpectrumSpec,
    delta: f64,
    grid: usize,
) -> Result<(Vec<LorenzRow>, LorenzOrder)> {
    let (m1, m2) = (s1.at(delta)?, s2.at(delta)?);
    let (c1, c2) = (lorenz_curve(m1.as_ref(), grid), lorenz_curve(m2.as_ref(), grid));
    let rows = c1.u.iter().zip(&c1.l).zip(&c2.l).map(|((&u, &l1), &l2)| LorenzRow { u, l1, l2 }).collect();
    Ok((rows, lorenz_compare(m1.as_ref(), m2.as_ref(), LORENZ_EPS)?))
}

pub struct Lorenz;

impl Typed for Lorenz {
    type Params = LorenzParams;
    const NAME: &'static str = "lorenz";
    const ABOUT: &'static str = "Lorenz curves and order of two spectra";

    fn execute(&self, p: &LorenzParams, ctx: &mut RunContext) -> Result<Outcome> {
        let (rows, order) = lorenz_table(&p.spectrum1, &p.spectrum2, p.delta, p.grid)?;
        for r in &rows {
            ctx.plot("L1", r.u, r.l1);
            ctx.plot("L2", r.u, r.l2);
        }
        ctx.write_csv("lorenz.csv", &rows)?;
        let verdict = lorenz_name(order);
        let mut out = Outcome::default();
        out.note(format!("{} vs {} at delta = {}: {verdict}", p.spectrum1.label(), p.spectrum2.label(), p.delta));
        if let Some(want) = &p.expect {
            out.check("order", verdict == want, format!("got {verdict}, expected {want}"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdParams {
    pub f: FunctionSpec,
    pub families: Vec<SpectrumSpec>,
    /// optional upper bound per family
    pub max_threshold: Vec<Option<f64>>,
    pub tol: f64,
    /// slack allowed when a spikier family must not need a larger δ
    pub order_margin: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self {
            f: FunctionSpec::named("abs"),
            families: vec![
                SpectrumSpec::geometric(0.0),
                SpectrumSpec::geometric(20.0),
                SpectrumSpec::two_point(1e-4, 0.99),
            ],
            max_threshold: vec![None, None, Some(1.05)],
            tol: 1e-4,
            order_margin: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub family: String,
    pub threshold: f64,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub delta_opt: f64,
}

pub struct ThresholdExperiment;

impl Typed for ThresholdExperiment {
    type Params = ThresholdParams;
    const NAME: &'static str = "threshold";
    const ABOUT: &'static str = "SE perfect-recovery threshold per spectrum family";

    fn execute(&self, p: &ThresholdParams, ctx: &mut RunContext) -> Result<Outcome> {
        if !p.max_threshold.is_empty() && p.max_threshold.len() != p.families.len() {
            bail!("max_threshold needs one entry per family");
        }
        let f = p.f.build()?;
        let se = StateEvolution::shared(f.clone(), 0.0);
        let d_opt = f.delta_opt();
        let mut rows = Vec::new();
        for fam in &p.families {
            let t = se.recovery_threshold(&fam.family(), p.tol, THRESHOLD_DELTA_HI)?;
            rows.push(ThresholdRow {
                family: fam.label(),
                threshold: t.delta,
                bracket_lo: t.bracket.0,
                bracket_hi: t.bracket.1,
                delta_opt: d_opt,
            });
        }
        ctx.write_csv("thresholds.csv", &rows)?;
        let mut out = Outcome::default();
        out.note(format!("f = {}, delta_opt = {d_opt:.6}", f.name()));
        for r in &rows {
            out.note(format!(
                "{}: threshold {:.5} in ({:.5}, {:.5}]",
                r.family, r.threshold, r.bracket_lo, r.bracket_hi
            ));
        }
        for (i, (a, fa)) in rows.iter().zip(&p.families).enumerate() {
            if let Some(Some(cap)) = p.max_threshold.get(i) {
                out.check(format!("{} <= {cap}", a.family), a.threshold <= *cap, format!("{:.5}", a.threshold));
            }
            for (b, fb) in rows.iter().zip(&p.families).skip(i + 1) {
                let at = a.threshold.max(b.threshold);
                let order = lorenz_compare(fa.at(at)?.as_ref(), fb.at(at)?.as_ref(), LORENZ_EPS)?;
                let (spiky, flat) = match order {
                    LorenzOrder::MoreSpiky => (a, b),
                    LorenzOrder::LessSpiky => (b, a),
                    _ => continue,
                };
                out.check(
                    format!("{} needs no more than {}", spiky.family, flat.family),
                    spiky.threshold <= flat.threshold + p.order_margin,
                    format!("{:.5} vs {:.5}", spiky.threshold, flat.threshold),
                );
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSlopeParams {
    pub f: FunctionSpec,
    pub delta: f64,
    pub spectra: Vec<SpectrumSpec>,
    /// decreasing noise variances
    pub sigma_w2: Vec<f64>,
    pub init_v: Option<f64>,
    /// bound on the last successive relative slope change
    pub converge_tol: f64,
    /// bound on max C / min C - 1 across spectra
    pub c_spread: f64,
}

impl Default for NoiseSlopeParams {
    fn default() -> Self {
        Self {
            f: FunctionSpec::named("abs"),
            delta: 1.1,
            spectra: vec![SpectrumSpec::geometric(10.0), SpectrumSpec::geometric(20.0)],
            sigma_w2: (0..9).map(|k| 1e-6 * 10f64.powf(-0.5 * k as f64)).collect(),
            init_v: Some(20.0),
            converge_tol: 0.05,
            c_spread: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub spectrum: String,
    pub sigma_w2: f64,
    pub mse: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantRow {
    pub spectrum: String,
    pub extrapolated_slope: f64,
    pub inv_lambda_mean: f64,
    pub c: f64,
}

pub struct NoiseSlope;

impl Typed for NoiseSlope {
    type Params = NoiseSlopeParams;
    const NAME: &'static str = "noise_slope";
    const ABOUT: &'static str = "small-noise slope MSE/sigma^2 and the constant C(delta, f)";

    fn execute(&self, p: &NoiseSlopeParams, ctx: &mut RunContext) -> Result<Outcome> {
        let f = p.f.build()?;
        let v0 = p.init_v.map_or(1.0, informative_v_r);
        let mut slopes = Vec::new();
        let mut consts = Vec::new();
        let mut out = Outcome::default();
        out.note(format!("f = {}, delta = {}", f.name(), p.delta));
        for s in &p.spectra {
            let model = s.at(p.delta)?;
            let ns = noise_sensitivity_slope(&f, model.as_ref(), p.delta, &p.sigma_w2, v0)?;
            for ((&s2, &m), &k) in ns.sigma_w2.iter().zip(&ns.mse).zip(&ns.slopes) {
                ctx.plot(&s.label(), s2, k);
                slopes.push(SlopeRow { spectrum: s.label(), sigma_w2: s2, mse: m, slope: k });
            }
            let changes: Vec<f64> = ns.slopes.windows(2).map(|w| ((w[1] - w[0]) / w[0]).abs()).collect();
            let last = changes.last().copied().unwrap_or(f64::NAN);
            out.check(
                format!("{} slope converges", s.label()),
                last < p.converge_tol,
                format!(
                    "successive relative changes {:?}",
                    changes.iter().map(|c| format!("{c:.2e}")).collect::<Vec<_>>()
                ),
            );
            out.check(
                format!("{} C positive and finite", s.label()),
                ns.c > 0.0 && ns.c.is_finite(),
                format!("C = {:.6}", ns.c),
            );
            consts.push(ConstantRow {
                spectrum: s.label(),
                extrapolated_slope: ns.extrapolated,
                inv_lambda_mean: ns.extrapolated / ns.c,
                c: ns.c,
            });
        }
        ctx.write_csv("slopes.csv", &slopes)?;
        ctx.write_csv("constants.csv", &consts)?;
        if consts.len() > 1 {
            let lo = consts.iter().map(|c| c.c).fold(f64::INFINITY, f64::min);
            let hi = consts.iter().map(|c| c.c).fold(f64::NEG_INFINITY, f64::max);
            out.check("C stable across spectra", hi / lo - 1.0 <= p.c_spread, format!("C in [{lo:.6}, {hi:.6}]"));
        }
        Ok(out)
    }
}
