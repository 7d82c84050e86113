//! Prompt templates and rendering.
//!
//! The templates are stored verbatim as text resources; rendering only
//! substitutes the named placeholders, so the wording that reaches a model
//! is stable and auditable.

use crate::consensus::ConfidenceInterval;

/// Gain-retune template. Placeholders: `{target_avg_iters_conv}`,
/// `{curr_Kp}`, `{curr_mean_conv_iters}`, `{memory_table}`.
pub const KP_TUNING_TEMPLATE: &str = include_str!("prompts/kp_tuning.txt");

/// Role-play preamble for SLA negotiation turns.
pub const NEGOTIATION_TEMPLATE: &str = include_str!("prompts/negotiation.txt");

/// Renders the sliding-window memory rows, most recent first.
pub fn render_memory_table(memory: &[(f64, f64)]) -> String {
    if memory.is_empty() {
        return " (empty) ".to_owned();
    }
    let mut out = String::from("\n");
    for (kp, kpi) in memory {
        out.push_str(&format!("| Kp: {kp}, KPI: {kpi} |\n"));
    }
    out
}

/// Renders the full gain-retune prompt.
pub fn render_kp_prompt(
    target_kpi: f64,
    current_kp: f64,
    current_kpi: f64,
    memory: &[(f64, f64)],
) -> String {
    KP_TUNING_TEMPLATE
        .replace("{target_avg_iters_conv}", &target_kpi.to_string())
        .replace("{curr_Kp}", &current_kp.to_string())
        .replace("{curr_mean_conv_iters}", &current_kpi.to_string())
        .replace("{memory_table}", &render_memory_table(memory))
}

/// Renders the guard-rail fragment appended to every negotiation prompt.
/// Bounds are substituted as integers: floor of the lower edge, ceiling of
/// the upper.
pub fn render_guardrail(interval: &ConfidenceInterval) -> String {
    let lo = interval.lower.floor() as i64;
    let hi = interval.upper.ceil() as i64;
    format!(
        "An optimization algorithm calculates a confidence interval of SLA values \
         where the optimal SLA exists. The algorithm suggests that the optimal SLA \
         value is between: {lo}-{hi} Mbps. Numerical guard-rail: Offer an SLA \
         strictly within [{lo},{hi}]. If you propose a value outside this interval, \
         justify the trade-off explicitly."
    )
}

/// Assembles one tenant turn: preamble, operator intent, chat history, the
/// other agents' latest messages and the guard-rail, if active.
pub fn render_tenant_prompt(
    intent_prompt: &str,
    history: &str,
    others_last: &[(String, String)],
    guardrail: Option<&str>,
) -> String {
    let mut out = String::from(NEGOTIATION_TEMPLATE);
    out.push_str("\nYour operator intent: ");
    out.push_str(intent_prompt);
    if !history.is_empty() {
        out.push_str("\nNegotiation history so far:\n");
        out.push_str(history);
    }
    if !others_last.is_empty() {
        out.push_str("\nLatest messages from the other agents:\n");
        for (id, msg) in others_last {
            out.push_str(&format!("[{id}]: {msg}\n"));
        }
    }
    if let Some(g) = guardrail {
        out.push('\n');
        out.push_str(g);
    }
    out
}

/// Assembles the mediator turn from all tenant proposals of the round.
pub fn render_mediator_prompt(
    intent_prompt: &str,
    history: &str,
    proposals: &[(String, String)],
    guardrail: Option<&str>,
) -> String {
    let mut out = String::from(NEGOTIATION_TEMPLATE);
    out.push_str("\nYou are the network mediator, a trusted entity that balances all tenants. ");
    out.push_str("Your operator intent: ");
    out.push_str(intent_prompt);
    if !history.is_empty() {
        out.push_str("\nNegotiation history so far:\n");
        out.push_str(history);
    }
    out.push_str("\nTenant proposals this round:\n");
    for (id, msg) in proposals {
        out.push_str(&format!("[{id}]: {msg}\n"));
    }
    if let Some(g) = guardrail {
        out.push('\n');
        out.push_str(g);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kp_prompt_substitutes_placeholders() {
        let p = render_kp_prompt(1.7, 0.5, 3.0, &[(0.5, 5.0)]);
        assert!(p.contains("which is 1.7"));
        assert!(p.contains("the value of 0.5"));
        assert!(p.contains("KPI is now 3"));
        assert!(p.contains("| Kp: 0.5, KPI: 5 |"));
        // the response template must survive rendering untouched
        assert!(p.contains("{\"Kp\": 0}"));
        assert!(!p.contains("{curr_Kp}"));
    }

    #[test]
    fn guardrail_uses_integer_bounds() {
        let ci = ConfidenceInterval {
            mean: 60.2,
            sd: 1.0,
            half_width: 5.2,
            lower: 55.0,
            upper: 65.4,
            restarts: 100,
            excluded: 0,
        };
        let g = render_guardrail(&ci);
        assert!(g.contains("between: 55-66 Mbps"));
        assert!(g.contains("strictly within [55,66]"));
    }

    #[test]
    fn degenerate_interval_is_single_point() {
        let ci = ConfidenceInterval {
            mean: 60.0,
            sd: 0.0,
            half_width: 0.0,
            lower: 60.0,
            upper: 60.0,
            restarts: 10,
            excluded: 0,
        };
        let g = render_guardrail(&ci);
        assert!(g.contains("between: 60-60 Mbps"));
    }

    #[test]
    fn tenant_prompt_carries_response_template() {
        let p = render_tenant_prompt("maximize QoS", "", &[], None);
        assert!(p.contains("Reasoning: (Your reasoning in 1-2 sentences) {\"throughput\": 0}"));
        assert!(p.contains("maximize QoS"));
    }
}
