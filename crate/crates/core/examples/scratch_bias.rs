// Temporary probe; not part of the deliverable.
use ccsamp_core::designs::*;
use ccsamp_core::logistic::*;

fn main() {
    let cov = CovariateGenerator::IidBernoulli { pi: 0.5 };
    let beta0 = vec![2.0f64.ln()];
    let lambda0 = solve_lambda0_for_case_fraction(&cov, &beta0, 0.2).unwrap();
    println!("lambda0 = {lambda0}");
    for n in [2000usize, 20000, 200000] {
        let base_cfg = BaseConfig { n, covariates: cov.clone(), lambda0, beta0: beta0.clone() };
        let design = DesignSpec { family: DesignFamily::CcSrs, basis: CountBasis::Observed, f: 0.5, p_hint: 0.2 };
        let base = generate_study_base(&base_cfg, 7).unwrap();
        let s = sample_controls(&base, &design, 13).unwrap();
        let model = ExponentialOdds { dim: 1 };
        let cfit = clogit_fit(&s.set, &model, &[0.0]).unwrap();
        let ufit = ulogit_fit(&s.set, &model).unwrap();
        // hand 2x2 counts
        let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
        for m in s.set.members() {
            match (m.is_case, m.z[0] > 0.5) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
        let sample_lor = (a * d / (b * c) as f64).ln();
        println!(
            "N={n} |E|={} eta={} counts=({a},{b},{c},{d}) clogit={:.6} ulogit={:.6} sample logOR={:.6}",
            s.set.len(), s.set.eta(), cfit.beta_hat[0], ufit.beta_hat[0], sample_lor
        );
    }
    // Mean over reps at N=20000 to see bias scaling
    for n in [2000usize, 8000] {
        let base_cfg = BaseConfig { n, covariates: cov.clone(), lambda0, beta0: beta0.clone() };
        let design = DesignSpec { family: DesignFamily::CcSrs, basis: CountBasis::Observed, f: 0.5, p_hint: 0.2 };
        let cfg = SimConfig { base: base_cfg, design, replications: 400, fitters: vec![Fitter::Clogit, Fitter::Ulogit] };
        let rep = run_simulation(&cfg, 0xBEEF).unwrap();
        for s in &rep.summaries {
            println!("N={n} {}: bias {:.5} mc_se {:.5} var_ratio {:.4} coverage {:.4}",
                s.fitter, s.bias[0], s.mc_se[0], s.var_ratio[0], s.coverage95[0]);
        }
    }
}
