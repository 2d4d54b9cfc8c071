use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;

use super::Purpose;

#[derive(Debug, Default)]
struct Counters {
    calls: AtomicU64,
    input_tokens: AtomicU64,
    output_tokens: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> PurposeUsage {
        PurposeUsage {
            calls: self.calls.load(Ordering::Acquire),
            input_tokens: self.input_tokens.load(Ordering::Acquire),
            output_tokens: self.output_tokens.load(Ordering::Acquire),
        }
    }
}

/// Cumulative token and call counters per purpose. Counters only grow.
#[derive(Debug, Default)]
pub struct UsageLedger {
    extraction: Counters,
    refinement: Counters,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    fn counters(&self, purpose: Purpose) -> &Counters {
        match purpose {
            Purpose::Extraction => &self.extraction,
            Purpose::Refinement => &self.refinement,
        }
    }

    pub fn record(&self, purpose: Purpose, input_tokens: u64, output_tokens: u64) {
        let c = self.counters(purpose);
        c.calls.fetch_add(1, Ordering::AcqRel);
        c.input_tokens.fetch_add(input_tokens, Ordering::AcqRel);
        c.output_tokens.fetch_add(output_tokens, Ordering::AcqRel);
    }

    pub fn usage(&self, purpose: Purpose) -> PurposeUsage {
        self.counters(purpose).snapshot()
    }

    pub fn report(&self) -> UsageReport {
        usage_report(self)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PurposeUsage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl PurposeUsage {
    pub fn total_tokens(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct UsageReport {
    pub extraction: PurposeUsage,
    pub refinement: PurposeUsage,
}

impl UsageReport {
    pub fn total(&self) -> PurposeUsage {
        PurposeUsage {
            calls: self.extraction.calls + self.refinement.calls,
            input_tokens: self.extraction.input_tokens + self.refinement.input_tokens,
            output_tokens: self.extraction.output_tokens + self.refinement.output_tokens,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.total() == PurposeUsage::default()
    }
}

pub fn usage_report(ledger: &UsageLedger) -> UsageReport {
    UsageReport {
        extraction: ledger.usage(Purpose::Extraction),
        refinement: ledger.usage(Purpose::Refinement),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fresh_ledger_is_zero() {
        let ledger = UsageLedger::new();
        assert!(ledger.report().is_zero());
        assert_eq!(ledger.report(), UsageReport::default());
    }

    #[test]
    fn sums_per_purpose() {
        let ledger = UsageLedger::new();
        ledger.record(Purpose::Extraction, 100, 20);
        ledger.record(Purpose::Extraction, 100, 20);
        let r = ledger.report();
        assert_eq!(
            r.extraction,
            PurposeUsage { calls: 2, input_tokens: 200, output_tokens: 40 }
        );
        assert_eq!(r.refinement, PurposeUsage::default());

        ledger.record(Purpose::Refinement, 7, 3);
        let r = ledger.report();
        assert_eq!(r.extraction.input_tokens, 200);
        assert_eq!(r.refinement, PurposeUsage { calls: 1, input_tokens: 7, output_tokens: 3 });
        assert_eq!(r.total().calls, 3);
    }

    proptest! {
        #[test]
        fn totals_match_call_sums(calls in prop::collection::vec((any::<bool>(), 0u64..5000, 0u64..5000), 0..60)) {
            let ledger = UsageLedger::new();
            let mut prev = ledger.report();
            let mut expect = UsageReport::default();
            for (is_extraction, input, output) in calls {
                let purpose = if is_extraction { Purpose::Extraction } else { Purpose::Refinement };
                ledger.record(purpose, input, output);
                let slot = if is_extraction { &mut expect.extraction } else { &mut expect.refinement };
                slot.calls += 1;
                slot.input_tokens += input;
                slot.output_tokens += output;
                let now = ledger.report();
                for (a, b) in [(prev.extraction, now.extraction), (prev.refinement, now.refinement)] {
                    prop_assert!(b.calls >= a.calls && b.input_tokens >= a.input_tokens && b.output_tokens >= a.output_tokens);
                }
                prev = now;
            }
            prop_assert_eq!(ledger.report(), expect);
        }
    }
}
