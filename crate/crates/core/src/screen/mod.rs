//! Simulated mobile GUI: screens, coordinate-grounded elements, declared
//! transitions and the environment that executes actions against them.

mod env;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use env::{Environment, NoiseConfig};

/// Width of the device coordinate space in pixels.
pub const SCREEN_WIDTH: i32 = 1080;
/// Height of the device coordinate space in pixels.
pub const SCREEN_HEIGHT: i32 = 2400;

/// Screen id shown while a delayed transition is still loading.
pub const LOADING_SCREEN_ID: &str = "__loading__";

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl PartialEq<str> for $name {
            fn eq(&self, other: &str) -> bool {
                self.0 == other
            }
        }

        impl PartialEq<&str> for $name {
            fn eq(&self, other: &&str) -> bool {
                self.0 == *other
            }
        }
    };
}

string_id!(
    /// Identifier of a screen within an app model.
    ScreenId
);
string_id!(
    /// Identifier of an element, unique within its screen.
    ElementId
);

/// Integral pixel coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub x: i32,
    pub y: i32,
}

impl Point {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn in_coordinate_space(self) -> bool {
        (0..SCREEN_WIDTH).contains(&self.x) && (0..SCREEN_HEIGHT).contains(&self.y)
    }

    pub fn check_range(self) -> Result<Self> {
        if self.in_coordinate_space() {
            Ok(self)
        } else {
            Err(Error::Range { x: self.x, y: self.y, width: SCREEN_WIDTH, height: SCREEN_HEIGHT })
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Axis-aligned rectangle; contains `[x, x + width) × [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: i32,
    pub y: i32,
    pub width: i32,
    pub height: i32,
}

impl Rect {
    pub const fn new(x: i32, y: i32, width: i32, height: i32) -> Self {
        Self { x, y, width, height }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x && p.x < self.x + self.width && p.y >= self.y && p.y < self.y + self.height
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + self.width / 2, self.y + self.height / 2)
    }

    pub fn half_diagonal(&self) -> f64 {
        let (w, h) = (self.width as f64, self.height as f64);
        (w * w + h * h).sqrt() / 2.0
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x < other.x + other.width
            && other.x < self.x + self.width
            && self.y < other.y + other.height
            && other.y < self.y + self.height
    }

    /// Non-empty and fully inside the device coordinate space.
    pub fn in_coordinate_space(&self) -> bool {
        self.width > 0
            && self.height > 0
            && self.x >= 0
            && self.y >= 0
            && self.x + self.width <= SCREEN_WIDTH
            && self.y + self.height <= SCREEN_HEIGHT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Button,
    TextField,
    ListItem,
    Toggle,
    Link,
    Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub id: ElementId,
    pub kind: ElementKind,
    /// Display text. `{name}` placeholders render the current value of variable `name`.
    pub label: String,
    pub bounds: Rect,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

fn default_true() -> bool {
    true
}

impl Element {
    pub fn new(id: impl Into<ElementId>, kind: ElementKind, label: impl Into<String>, bounds: Rect) -> Self {
        Self { id: id.into(), kind, label: label.into(), bounds, enabled: true }
    }

    pub fn disabled(mut self) -> Self {
        self.enabled = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Screen {
    pub id: ScreenId,
    pub name: String,
    pub elements: Vec<Element>,
    #[serde(default)]
    pub scrollable: bool,
    /// Element list shown after scrolling down; empty when scrolling reveals nothing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scroll_elements: Vec<Element>,
}

impl Screen {
    pub fn new(id: impl Into<ScreenId>, name: impl Into<String>, elements: Vec<Element>) -> Self {
        Self { id: id.into(), name: name.into(), elements, scrollable: false, scroll_elements: Vec::new() }
    }

    pub fn with_scroll(mut self, revealed: Vec<Element>) -> Self {
        self.scrollable = true;
        self.scroll_elements = revealed;
        self
    }

    /// Elements visible in the given scroll position.
    pub fn visible(&self, scrolled: bool) -> &[Element] {
        if scrolled && self.scrollable && !self.scroll_elements.is_empty() {
            &self.scroll_elements
        } else {
            &self.elements
        }
    }

    /// Looks an element up in either scroll position.
    pub fn element(&self, id: &ElementId) -> Option<&Element> {
        self.elements.iter().chain(self.scroll_elements.iter()).find(|e| &e.id == id)
    }

    /// Whether the element is only reachable after scrolling down.
    pub fn is_scroll_only(&self, id: &ElementId) -> bool {
        !self.elements.iter().any(|e| &e.id == id) && self.scroll_elements.iter().any(|e| &e.id == id)
    }
}

/// Returns the unique element whose bounds contain `point`, or `None`.
pub fn hit_test(elements: &[Element], point: Point) -> Result<Option<&Element>> {
    point.check_range()?;
    Ok(elements.iter().find(|e| e.bounds.contains(point)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    LongPress,
    Type,
    Scroll,
    Drag,
    OpenApp,
    PressHome,
    PressBack,
    Finished,
    Answer,
}

impl ActionKind {
    /// Kinds that address an element through a point.
    pub fn is_element_action(self) -> bool {
        matches!(self, ActionKind::Click | ActionKind::LongPress | ActionKind::Type | ActionKind::Drag)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Click => "click",
            ActionKind::LongPress => "long_press",
            ActionKind::Type => "type",
            ActionKind::Scroll => "scroll",
            ActionKind::Drag => "drag",
            ActionKind::OpenApp => "open_app",
            ActionKind::PressHome => "press_home",
            ActionKind::PressBack => "press_back",
            ActionKind::Finished => "finished",
            ActionKind::Answer => "answer",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

/// An agent action in the device action space.
///
/// `target` is optional agent-side metadata naming the element the agent meant
/// to operate; the environment ignores it and grounds actions by `point` only.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<ElementId>,
}

impl Action {
    fn bare(kind: ActionKind) -> Self {
        Self { kind, point: None, text: None, direction: None, target: None }
    }

    pub fn click(point: Point) -> Self {
        Self { point: Some(point), ..Self::bare(ActionKind::Click) }
    }

    pub fn long_press(point: Point) -> Self {
        Self { point: Some(point), ..Self::bare(ActionKind::LongPress) }
    }

    /// Types `text` into the field under `point`.
    pub fn type_text(point: Point, text: impl Into<String>) -> Self {
        Self { point: Some(point), text: Some(text.into()), ..Self::bare(ActionKind::Type) }
    }

    pub fn scroll(direction: Direction) -> Self {
        Self { direction: Some(direction), ..Self::bare(ActionKind::Scroll) }
    }

    pub fn drag(point: Option<Point>, direction: Direction) -> Self {
        Self { point, direction: Some(direction), ..Self::bare(ActionKind::Drag) }
    }

    pub fn open_app(app: impl Into<String>) -> Self {
        Self { text: Some(app.into()), ..Self::bare(ActionKind::OpenApp) }
    }

    pub fn press_home() -> Self {
        Self::bare(ActionKind::PressHome)
    }

    pub fn press_back() -> Self {
        Self::bare(ActionKind::PressBack)
    }

    pub fn finished() -> Self {
        Self::bare(ActionKind::Finished)
    }

    pub fn answer(text: impl Into<String>) -> Self {
        Self { text: Some(text.into()), ..Self::bare(ActionKind::Answer) }
    }

    pub fn with_target(mut self, target: impl Into<ElementId>) -> Self {
        self.target = Some(target.into());
        self
    }

    /// Checks the per-kind payload requirements.
    pub fn validate(&self) -> Result<()> {
        let missing = |what: &str| Error::Validation(vec![format!("{} action requires {what}", self.kind)]);
        match self.kind {
            ActionKind::Click | ActionKind::LongPress => {
                self.point.ok_or_else(|| missing("a point"))?;
            }
            ActionKind::Type => {
                self.text.as_ref().ok_or_else(|| missing("text"))?;
            }
            ActionKind::Answer => {
                self.text.as_ref().ok_or_else(|| missing("text"))?;
            }
            ActionKind::Scroll | ActionKind::Drag => {
                self.direction.ok_or_else(|| missing("a direction"))?;
            }
            ActionKind::OpenApp | ActionKind::PressHome | ActionKind::PressBack | ActionKind::Finished => {}
        }
        if let Some(p) = self.point {
            p.check_range()?;
        }
        Ok(())
    }

    pub fn is_declaration(&self) -> bool {
        self.kind == ActionKind::Answer && self.text.as_deref() == Some(GUI_BUG_ANSWER)
    }
}

/// Answer payload that declares a defect in baseline mode.
pub const GUI_BUG_ANSWER: &str = "GUI_BUG";

/// Value written by a `mutate` effect.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Literal(String),
    /// The text payload of the action that produced the effect.
    Input,
}

impl Value {
    pub fn literal(s: impl Into<String>) -> Self {
        Value::Literal(s.into())
    }

    pub fn resolve(&self, action: &Action) -> String {
        match self {
            Value::Literal(s) => s.clone(),
            Value::Input => action.text.clone().unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Effect {
    Navigate { target: ScreenId },
    Mutate { variable: String, value: Value },
    None,
}

impl Effect {
    pub fn navigate(target: impl Into<ScreenId>) -> Self {
        Effect::Navigate { target: target.into() }
    }

    pub fn mutate(variable: impl Into<String>, value: Value) -> Self {
        Effect::Mutate { variable: variable.into(), value }
    }

    pub fn set(variable: impl Into<String>, value: impl Into<String>) -> Self {
        Effect::mutate(variable, Value::literal(value))
    }

    pub fn nav_target(&self) -> Option<&ScreenId> {
        match self {
            Effect::Navigate { target } => Some(target),
            _ => None,
        }
    }
}

/// A declared transition: acting on `element` of `screen` with `action` yields `effect`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub screen: ScreenId,
    pub element: ElementId,
    pub action: ActionKind,
    pub effect: Effect,
}

impl Transition {
    pub fn new(screen: impl Into<ScreenId>, element: impl Into<ElementId>, action: ActionKind, effect: Effect) -> Self {
        Self { screen: screen.into(), element: element.into(), action, effect }
    }
}

/// The app under test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppModel {
    pub id: String,
    pub screens: Vec<Screen>,
    pub transitions: Vec<Transition>,
    pub initial_screen: ScreenId,
    #[serde(default)]
    pub variables: BTreeMap<String, String>,
}

impl AppModel {
    pub fn screen(&self, id: &ScreenId) -> Option<&Screen> {
        self.screens.iter().find(|s| &s.id == id)
    }

    pub fn screen_or_err(&self, id: &ScreenId) -> Result<&Screen> {
        self.screen(id).ok_or_else(|| Error::lookup("screen", id.as_str()))
    }

    /// Declared effect for acting on `element` of `screen` with `action`.
    pub fn transition(&self, screen: &ScreenId, element: &ElementId, action: ActionKind) -> Option<&Effect> {
        self.transitions
            .iter()
            .find(|t| &t.screen == screen && &t.element == element && t.action == action)
            .map(|t| &t.effect)
    }

    pub fn transitions_from<'a>(&'a self, screen: &'a ScreenId) -> impl Iterator<Item = &'a Transition> + 'a {
        self.transitions.iter().filter(move |t| &t.screen == screen)
    }

    /// All invariant violations, empty when the model is valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut screen_ids = BTreeSet::new();
        for s in &self.screens {
            if !screen_ids.insert(&s.id) {
                out.push(format!("duplicate screen id `{}`", s.id));
            }
            for list in [&s.elements, &s.scroll_elements] {
                let mut ids = BTreeSet::new();
                for e in list.iter() {
                    if !ids.insert(&e.id) {
                        out.push(format!("duplicate element id `{}` on screen `{}`", e.id, s.id));
                    }
                }
            }
            // an element shown in both scroll positions (a toolbar) must be identical
            for e in &s.scroll_elements {
                if s.elements.iter().any(|b| b.id == e.id && b != e) {
                    out.push(format!("element `{}` on screen `{}` differs between scroll positions", e.id, s.id));
                }
            }
            for e in s.elements.iter().chain(s.scroll_elements.iter()) {
                if !e.bounds.in_coordinate_space() {
                    out.push(format!(
                        "element `{}` on screen `{}` has bounds outside the {SCREEN_WIDTH}x{SCREEN_HEIGHT} space",
                        e.id, s.id
                    ));
                }
            }
            for list in [&s.elements, &s.scroll_elements] {
                for (i, a) in list.iter().enumerate() {
                    for b in &list[i + 1..] {
                        if a.bounds.overlaps(&b.bounds) {
                            out.push(format!("elements `{}` and `{}` overlap on screen `{}`", a.id, b.id, s.id));
                        }
                    }
                }
            }
            if s.id == LOADING_SCREEN_ID {
                out.push(format!("screen id `{LOADING_SCREEN_ID}` is reserved"));
            }
        }
        if self.screen(&self.initial_screen).is_none() {
            out.push(format!("initial screen `{}` does not exist", self.initial_screen));
        }
        let mut keys = BTreeSet::new();
        for t in &self.transitions {
            match self.screen(&t.screen) {
                None => out.push(format!("transition source screen `{}` does not exist", t.screen)),
                Some(s) => {
                    if s.element(&t.element).is_none() {
                        out.push(format!("transition element `{}` does not exist on screen `{}`", t.element, t.screen));
                    }
                }
            }
            if !t.action.is_element_action() {
                out.push(format!(
                    "transition on `{}`/`{}` uses non-element action `{}`",
                    t.screen, t.element, t.action
                ));
            }
            if let Effect::Navigate { target } = &t.effect {
                if self.screen(target).is_none() {
                    out.push(format!(
                        "transition on `{}`/`{}` navigates to missing screen `{target}`",
                        t.screen, t.element
                    ));
                }
            }
            if !keys.insert((&t.screen, &t.element, t.action)) {
                out.push(format!("duplicate transition for `{}`/`{}`/{}", t.screen, t.element, t.action));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// What an agent sees after each step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub screen_id: ScreenId,
    pub screen_name: String,
    pub elements: Vec<Element>,
    /// Visible app state (text values shown by the app).
    #[serde(default)]
    pub variables: BTreeMap<String, String>,
    /// Lowercase hex SHA-256 of the full environment state.
    pub state_digest: String,
    pub step_index: u64,
}

impl Observation {
    pub fn is_loading(&self) -> bool {
        self.screen_id == LOADING_SCREEN_ID
    }

    pub fn element(&self, id: &ElementId) -> Option<&Element> {
        self.elements.iter().find(|e| &e.id == id)
    }

    pub fn hit_test(&self, point: Point) -> Result<Option<&Element>> {
        hit_test(&self.elements, point)
    }

    /// Element an action addresses on this observation, if any.
    pub fn resolve(&self, action: &Action) -> Option<&Element> {
        if !action.kind.is_element_action() {
            return None;
        }
        action.point.and_then(|p| self.hit_test(p).ok().flatten())
    }
}

/// Interaction marker drawn on a pre-action observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Point>,
    pub kind: ActionKind,
    pub hit: Option<ElementId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedObservation {
    pub observation: Observation,
    pub marker: Marker,
}

/// Marks the action's interaction point on the pre-action observation.
pub fn annotate_action(observation: &Observation, action: &Action) -> AnnotatedObservation {
    let hit = action.point.and_then(|p| observation.hit_test(p).ok().flatten()).map(|e| e.id.clone());
    AnnotatedObservation {
        observation: observation.clone(),
        marker: Marker { point: action.point, kind: action.kind, hit },
    }
}

pub(crate) fn render_label(label: &str, variables: &BTreeMap<String, String>) -> String {
    if !label.contains('{') {
        return label.to_owned();
    }
    let mut out = String::with_capacity(label.len());
    let mut rest = label;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        match rest[start..].find('}') {
            Some(end) => {
                let name = &rest[start + 1..start + end];
                out.push_str(variables.get(name).map(String::as_str).unwrap_or(""));
                rest = &rest[start + end + 1..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}
