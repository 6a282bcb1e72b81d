use serde::{Deserialize, Serialize};

/// An announcement that fires at `t_fire` and is shown from `t_fire − lead`
/// on. `{when}` in the text becomes "in N steps" or "now".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEvent {
    pub t_fire: usize,
    pub lead: usize,
    pub text: String,
    #[serde(default)]
    pub hint: Option<String>,
}

impl ContextEvent {
    fn render(&self, t: usize) -> String {
        let steps = self.t_fire - t;
        let when = match steps {
            0 => "now".to_string(),
            1 => "in 1 step".to_string(),
            s => format!("in {s} steps"),
        };
        self.text.replace("{when}", &when)
    }

    fn visible(&self, t: usize) -> bool {
        t <= self.t_fire && t + self.lead >= self.t_fire
    }
}

/// Scripted per-step context text: an optional background sentence active
/// from a given step, plus the earliest visible event, or the default text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextStream {
    pub events: Vec<ContextEvent>,
    pub background: Vec<(usize, String)>,
    pub default_text: String,
}

impl ContextStream {
    pub fn new(mut events: Vec<ContextEvent>, default_text: impl Into<String>) -> Self {
        events.sort_by_key(|e| e.t_fire);
        ContextStream { events, background: Vec::new(), default_text: default_text.into() }
    }

    pub fn with_background(mut self, mut background: Vec<(usize, String)>) -> Self {
        background.sort_by_key(|b| b.0);
        self.background = background;
        self
    }

    pub fn text_at(&self, t: usize) -> String {
        let event = self.events.iter().find(|e| e.visible(t)).map(|e| e.render(t));
        let background = self
            .background
            .iter()
            .take_while(|(start, _)| *start <= t)
            .last()
            .map(|(_, text)| text.clone());
        match (background, event) {
            (Some(b), Some(e)) => format!("{b}. {e}"),
            (Some(b), None) => b,
            (None, Some(e)) => e,
            (None, None) => self.default_text.clone(),
        }
    }

    /// One context string per step.
    pub fn expand(&self, horizon: usize) -> Vec<String> {
        (0..horizon).map(|t| self.text_at(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream() -> ContextStream {
        ContextStream::new(
            vec![ContextEvent { t_fire: 20, lead: 2, text: "gust {when}".into(), hint: None }],
            "calm",
        )
    }

    #[test]
    fn lead_window() {
        let s = stream();
        assert_eq!(s.text_at(17), "calm");
        assert_eq!(s.text_at(18), "gust in 2 steps");
        assert_eq!(s.text_at(19), "gust in 1 step");
        assert_eq!(s.text_at(20), "gust now");
        assert_eq!(s.text_at(21), "calm");
        assert_eq!(s.expand(30).len(), 30);
    }

    #[test]
    fn background_combines() {
        let s = stream().with_background(vec![(0, "sunny".into()), (19, "cloudy".into())]);
        assert_eq!(s.text_at(5), "sunny");
        assert_eq!(s.text_at(18), "sunny. gust in 2 steps");
        assert_eq!(s.text_at(19), "cloudy. gust in 1 step");
    }
}
