//! Human-readable renderings of stage summaries.

use std::fmt::Write;

use aq_core::container::MemoryReport;

use crate::pipeline::{
    AblateSummary, AllocateSummary, Artifact, CalibrateSummary, EvalSummary, InspectSummary, PackSummary,
    QuantizeSummary, RunReport, SensitivitySummary, TrainSummary,
};

pub trait Render {
    fn render(&self) -> String;
}

fn artifact(out: &mut String, label: &str, a: &Artifact) {
    let _ = writeln!(out, "{label}: {} (sha256 {})", a.path, &a.sha256[..16]);
}

fn memory(out: &mut String, m: &MemoryReport) {
    let _ = writeln!(
        out,
        "payload {} bytes in a {}-byte file; code {:.3} bpw, effective {:.3} bpw; {:.2}x vs 16-bit",
        m.payload_bytes, m.file_bytes, m.code_bpw, m.effective_bpw, m.effective_ratio
    );
}

impl Render for TrainSummary {
    fn render(&self) -> String {
        let r = &self.report;
        let mut out = String::new();
        let _ = writeln!(out, "trained {} steps (seed {})", r.steps_run, self.seed);
        let _ = writeln!(out, "held-out action mse {:.3e}", r.heldout_mse);
        let _ = writeln!(
            out,
            "mean gradient norm {:.3e} -> {:.3e} (inf-norm {:.3e})",
            r.init_grad_norm, r.final_grad_norm, r.grad_inf_norm
        );
        artifact(&mut out, "policy", &self.policy);
        out
    }
}

impl Render for CalibrateSummary {
    fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} calibration samples (seed {}, action loss {:?})",
            self.samples, self.seed, self.action_loss
        );
        artifact(&mut out, "calibration", &self.calibration);
        out
    }
}

impl Render for SensitivitySummary {
    fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>10} {:>12} {:>12}", "tensor", "score", "redundancy", "relevance");
        for e in &self.table.entries {
            let flag = if e.terms.degenerate { "  degenerate" } else { "" };
            let _ = writeln!(
                out,
                "{:<12} {:>10.4} {:>12.4e} {:>12.4e}{flag}",
                e.name, e.score, e.terms.redundancy, e.terms.relevance
            );
        }
        artifact(&mut out, "table", &self.output);
        out
    }
}

impl Render for AllocateSummary {
    fn render(&self) -> String {
        let a = &self.assignment;
        let mut out = String::new();
        let solver = if self.exact { "exact" } else { "greedy" };
        let _ = writeln!(
            out,
            "{solver} allocation: {:.4} bpw of {} budget, objective {:.4e}",
            a.achieved_bpw, self.budget, a.objective
        );
        for t in &a.tensors {
            let _ = writeln!(out, "  {:<12} {} bits", t.name, t.qtype.bit_width());
        }
        let errs: Vec<String> = a.layer_errors.iter().map(|e| format!("{e:.3e}")).collect();
        let _ = writeln!(out, "layer errors: {}", errs.join(" "));
        if !a.clamped.is_empty() {
            let _ = writeln!(out, "negative scores clamped to zero: {}", a.clamped.join(", "));
        }
        artifact(&mut out, "assignment", &self.output);
        out
    }
}

impl Render for QuantizeSummary {
    fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scale search ({:?}, amf_alpha {})", self.importance_mode, self.amf_alpha);
        for t in &self.tensors {
            let r = &t.report;
            let kept = if r.kept_rtn { "  kept rtn" } else { "" };
            let _ = writeln!(
                out,
                "  {:<12} {} bits  {}/{} blocks converged  weighted error {:.3e} (rtn {:.3e}){kept}",
                t.name, t.bit_width, r.converged_blocks, r.blocks, r.weighted_error, r.rtn_weighted_error
            );
        }
        artifact(&mut out, "quantized", &self.output);
        out
    }
}

impl Render for PackSummary {
    fn render(&self) -> String {
        let mut out = String::new();
        memory(&mut out, &self.memory);
        artifact(&mut out, "pack", &self.output);
        out
    }
}

impl Render for InspectSummary {
    fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} (sha256 {})", self.path, &self.sha256[..16]);
        for t in &self.tensors {
            let _ = writeln!(
                out,
                "  {:<12} {}x{}  {} bits {:?}  B={} S={}  {} blocks",
                t.name, t.rows, t.cols, t.bit_width, t.codebook, t.block_size, t.superblock_size, t.blocks
            );
        }
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "  {k} = {v}");
        }
        memory(&mut out, &self.memory);
        out
    }
}

impl Render for EvalSummary {
    fn render(&self) -> String {
        format!(
            "success over {} episodes (seed {}): full precision {:.1}%, quantized {:.1}% ({:+.1} points)\n",
            self.episodes,
            self.seed,
            100.0 * self.full_precision,
            100.0 * self.quantized,
            self.delta_points
        )
    }
}

impl Render for AblateSummary {
    fn render(&self) -> String {
        let mut out = String::new();
        let fp = self.table.full_precision_success.iter().sum::<f64>()
            / self.table.full_precision_success.len().max(1) as f64;
        let _ = writeln!(
            out,
            "budget {} bpw, {} runs, full precision {:.1}%",
            self.table.budget,
            self.seeds.len(),
            100.0 * fp
        );
        for (i, name) in aq_harness::ablation::RUNGS.iter().enumerate() {
            let rows: Vec<_> = self.table.rows.iter().filter(|r| r.rung == i + 1).collect();
            let err = rows.iter().map(|r| r.weighted_error).sum::<f64>() / rows.len().max(1) as f64;
            let _ = writeln!(
                out,
                "  {}. {:<16} success {:>5.1}%  weighted error {:.3e}",
                i + 1,
                name,
                100.0 * self.mean_success[i],
                err
            );
        }
        out
    }
}

impl Render for RunReport {
    fn render(&self) -> String {
        let mut out = String::new();
        for (title, body) in [
            ("calibrate", self.calibrate.render()),
            ("sensitivity", self.sensitivity.render()),
            ("allocate", self.allocate.render()),
            ("quantize", self.quantize.render()),
            ("pack", self.pack.render()),
            ("eval", self.eval.render()),
        ] {
            let _ = writeln!(out, "== {title}");
            out.push_str(&body);
        }
        out
    }
}
