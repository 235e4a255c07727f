// Copyright 2026 The Unimart Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Two-stage outlier removal for timing samples.

/// How stage one bounds the sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum QuartileRule {
    /// Keep `Q1 <= v <= Q3`.
    #[default]
    Interquartile,
    /// Keep `Q1 - 1.5 IQR <= v <= Q3 + 1.5 IQR`.
    TukeyFences,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierOutcome {
    /// Retained samples in input order.
    pub survivors: Vec<f64>,
    pub stage1_survivors: usize,
    /// Fewer than four samples; nothing was removed.
    pub skipped: bool,
    /// Stage two removed everything and stage one's survivors were kept.
    pub fell_back: bool,
}

/// Quantile of sorted data by linear interpolation at `p * (n - 1)`.
///
/// The interpolation is anchored at the nearer neighbour so results agree
/// bit-for-bit with the common numerical libraries.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let t = pos - lo as f64;
    let (a, b) = (sorted[lo], sorted[hi]);
    let diff = b - a;
    if t >= 0.5 {
        b - diff * (1.0 - t)
    } else {
        a + diff * t
    }
}

fn mean_and_population_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Applies [`remove_outliers_with`] with the interquartile rule.
pub fn remove_outliers(samples: &[f64]) -> Vec<f64> {
    remove_outliers_with(samples, QuartileRule::Interquartile).survivors
}

pub fn remove_outliers_with(samples: &[f64], rule: QuartileRule) -> OutlierOutcome {
    if samples.len() < 4 {
        return OutlierOutcome {
            survivors: samples.to_vec(),
            stage1_survivors: samples.len(),
            skipped: true,
            fell_back: false,
        };
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (q1, q3) = (quantile(&sorted, 0.25), quantile(&sorted, 0.75));
    let (lo, hi) = match rule {
        QuartileRule::Interquartile => (q1, q3),
        QuartileRule::TukeyFences => {
            let iqr = q3 - q1;
            (q1 - 1.5 * iqr, q3 + 1.5 * iqr)
        }
    };
    let stage1: Vec<f64> = samples
        .iter()
        .copied()
        .filter(|v| lo <= *v && *v <= hi)
        .collect();
    let (mean, sd) = mean_and_population_sd(&stage1);
    let (lo, hi) = (mean - 1.5 * sd, mean + 1.5 * sd);
    let stage2: Vec<f64> = stage1
        .iter()
        .copied()
        .filter(|v| lo <= *v && *v <= hi)
        .collect();
    let fell_back = stage2.is_empty();
    OutlierOutcome {
        stage1_survivors: stage1.len(),
        survivors: if fell_back { stage1 } else { stage2 },
        skipped: false,
        fell_back,
    }
}

/// Mean of the samples left after outlier removal.
pub fn robust_mean(samples: &[f64], rule: QuartileRule) -> Option<f64> {
    let kept = remove_outliers_with(samples, rule).survivors;
    (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64)
}
