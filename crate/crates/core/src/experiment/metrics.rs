//! Learning-curve points and their CSV form.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::tracegen::OpKind;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricPoint {
    pub step: u64,
    pub epoch: u32,
    /// Tokens of every example consumed so far (prompt, target and EOS).
    pub tokens: u64,
    /// Mean training loss since the previous point; the first point holds
    /// the untrained loss of the first batch.
    pub loss: f64,
    pub acc: BTreeMap<OpKind, f64>,
    pub acc_overall: f64,
    pub acc_buckets: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub buckets: Vec<usize>,
    pub points: Vec<MetricPoint>,
}

impl Metrics {
    pub fn last(&self) -> Option<&MetricPoint> {
        self.points.last()
    }

    /// `step,tokens,loss,acc_add,acc_sub,acc_mul,acc_overall,acc_d{n}...`;
    /// ops that were not evaluated leave their cell empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,tokens,loss,acc_add,acc_sub,acc_mul,acc_overall");
        for d in &self.buckets {
            out.push_str(&format!(",acc_d{d}"));
        }
        out.push('\n');
        let cell = |v: Option<&f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for p in &self.points {
            out.push_str(&format!("{},{},{:.6}", p.step, p.tokens, p.loss));
            for op in OpKind::ALL {
                out.push(',');
                out.push_str(&cell(p.acc.get(&op)));
            }
            out.push_str(&format!(",{:.6}", p.acc_overall));
            for d in &self.buckets {
                out.push(',');
                out.push_str(&cell(p.acc_buckets.get(d)));
            }
            out.push('\n');
        }
        out
    }
}
