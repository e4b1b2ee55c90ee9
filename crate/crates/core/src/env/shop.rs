use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    normalize_ws, parse_bracketed, words, EnvError, EnvKind, Fixtures, GroundTruth, StepOutcome,
    TaskEnvironment, TaskInstance,
};

const RESULTS_PER_PAGE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Product {
    pub id: String,
    pub description: String,
    pub price: f64,
    #[serde(default)]
    pub attributes: Vec<String>,
    /// Option name to selectable values.
    #[serde(default)]
    pub options: BTreeMap<String, Vec<String>>,
    /// Long text behind `click[description]`.
    #[serde(default)]
    pub details: String,
    #[serde(default)]
    pub features: String,
    #[serde(default)]
    pub reviews: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Catalog {
    pub products: Vec<Product>,
}

impl Catalog {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.products.is_empty() {
            return Err(EnvError::Config("catalog has no products".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.products {
            if p.id.trim().is_empty() || !seen.insert(p.id.to_lowercase()) {
                return Err(EnvError::Config(format!("catalog product id `{}` is empty or duplicated", p.id)));
            }
            if !(p.price.is_finite() && p.price >= 0.0) {
                return Err(EnvError::Config(format!("product {} has an invalid price", p.id)));
            }
        }
        Ok(())
    }

    fn find(&self, id: &str) -> Option<usize> {
        self.products.iter().position(|p| p.id.eq_ignore_ascii_case(id.trim()))
    }
}

/// What a correct purchase looks like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShopTarget {
    pub product_id: String,
    #[serde(default)]
    pub options: BTreeMap<String, String>,
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default)]
    pub max_price: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Description,
    Features,
    Reviews,
}

#[derive(Debug, Clone, PartialEq)]
enum Page {
    Search,
    Results { hits: Vec<usize> },
    Item { product: usize, selected: BTreeMap<String, String> },
    Section { product: usize, section: Section },
}

#[derive(Debug)]
struct Session {
    catalog: Arc<Catalog>,
    stack: Vec<Page>,
}

/// A small web store with a page stack.
#[derive(Debug, Default)]
pub struct ShopEnv {
    session: Option<Session>,
}

fn price_text(price: f64) -> String {
    format!("${price:?}")
}

/// `ID` or `ID (name=value, ...)`.
fn purchase_answer(product: &Product, selected: &BTreeMap<String, String>) -> String {
    if selected.is_empty() {
        return product.id.clone();
    }
    let opts: Vec<String> = selected.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{} ({})", product.id, opts.join(", "))
}

fn parse_purchase(answer: &str) -> Option<(String, BTreeMap<String, String>)> {
    let answer = answer.trim();
    let (id, rest) = match answer.find(" (") {
        Some(i) => (&answer[..i], Some(&answer[i + 2..])),
        None => (answer, None),
    };
    if id.is_empty() {
        return None;
    }
    let mut options = BTreeMap::new();
    if let Some(rest) = rest {
        for pair in rest.trim_end_matches(')').split(", ") {
            let (k, v) = pair.split_once('=')?;
            options.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Some((id.to_string(), options))
}

impl Session {
    fn current(&self) -> &Page {
        self.stack.last().expect("stack never empty")
    }

    fn render(&self, page: &Page) -> String {
        match page {
            Page::Search => "WebShop search page. Available actions: has search bar: True, clickables: []".into(),
            Page::Results { hits } => {
                if hits.is_empty() {
                    return "No products match the query. Available actions: has search bar: False, clickables: [back to search]".into();
                }
                let rows: Vec<String> = hits
                    .iter()
                    .map(|&i| {
                        let p = &self.catalog.products[i];
                        format!(
                            "Product index is {}. Product description is {}. Product price is {}.",
                            p.id,
                            p.description,
                            price_text(p.price)
                        )
                    })
                    .collect();
                let ids: Vec<String> = hits
                    .iter()
                    .map(|&i| self.catalog.products[i].id.to_lowercase())
                    .collect();
                format!(
                    "{} Available actions: has search bar: False, clickables: [back to search, {}]",
                    rows.join(" "),
                    ids.join(", ")
                )
            }
            Page::Item { product, selected } => {
                let p = &self.catalog.products[*product];
                let mut text = format!("Product description is {}. Price: {}.", p.description, price_text(p.price));
                if !p.options.is_empty() {
                    let opts: Vec<String> = p
                        .options
                        .iter()
                        .map(|(k, vs)| format!("{k}: [{}]", vs.join(", ")))
                        .collect();
                    text.push_str(&format!(" Options: {}.", opts.join("; ")));
                }
                if !selected.is_empty() {
                    let sel: Vec<String> = selected.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    text.push_str(&format!(" Selected: {}.", sel.join(", ")));
                }
                text.push_str(
                    " Click corresponding options if needed. Click 'features' if you need more information. \
Click 'buy now' if you decide to purchase this product.",
                );
                let mut clickables = vec!["back to search".to_string(), "prev".to_string()];
                clickables.extend(p.options.values().flatten().cloned());
                clickables.extend(["description", "features", "reviews", "buy now"].map(String::from));
                format!(
                    "{text} Available actions: has search bar: False, clickables: [{}]",
                    clickables.join(", ")
                )
            }
            Page::Section { product, section } => {
                let p = &self.catalog.products[*product];
                let body = match section {
                    Section::Description if !p.details.is_empty() => p.details.as_str(),
                    Section::Description => p.description.as_str(),
                    Section::Features => p.features.as_str(),
                    Section::Reviews => p.reviews.as_str(),
                };
                let body = if body.is_empty() { "Nothing to show." } else { body };
                format!("{body} Available actions: has search bar: False, clickables: [back to search, prev]")
            }
        }
    }

    fn rank(&self, query: &str) -> Vec<usize> {
        let q = words(query);
        let mut scored: Vec<(usize, usize)> = self
            .catalog
            .products
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut text = words(&p.description);
                for a in &p.attributes {
                    text.extend(words(a));
                }
                (q.iter().filter(|w| text.contains(w)).count(), i)
            })
            .filter(|(score, _)| *score > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(RESULTS_PER_PAGE).map(|(_, i)| i).collect()
    }

    fn invalid(&self, why: &str) -> StepOutcome {
        StepOutcome::plain(format!("Invalid action: {why}"))
    }

    fn shown(&mut self, page: Page) -> StepOutcome {
        self.stack.push(page);
        StepOutcome::plain(self.render(self.current()))
    }

    fn click(&mut self, target: &str) -> StepOutcome {
        let target = normalize_ws(target).to_lowercase();
        match target.as_str() {
            "back to search" => {
                self.stack.truncate(1);
                return StepOutcome::plain(self.render(self.current()));
            }
            "prev" => {
                if self.stack.len() < 2 {
                    return self.invalid("there is no previous page.");
                }
                self.stack.pop();
                return StepOutcome::plain(self.render(self.current()));
            }
            _ => {}
        }
        match self.current().clone() {
            Page::Results { hits } => match hits
                .iter()
                .copied()
                .find(|&i| self.catalog.products[i].id.to_lowercase() == target)
            {
                Some(product) => self.shown(Page::Item { product, selected: BTreeMap::new() }),
                None => self.invalid(&format!("`{target}` is not clickable on this page.")),
            },
            Page::Item { product, mut selected } => {
                let section = match target.as_str() {
                    "description" => Some(Section::Description),
                    "features" => Some(Section::Features),
                    "reviews" => Some(Section::Reviews),
                    _ => None,
                };
                if let Some(section) = section {
                    return self.shown(Page::Section { product, section });
                }
                if target == "buy now" {
                    let p = &self.catalog.products[product];
                    return StepOutcome {
                        observation: self.render(self.current()),
                        terminal_detected: true,
                        objective_score: None,
                        answer: Some(purchase_answer(p, &selected)),
                    };
                }
                let option = self.catalog.products[product].options.iter().find_map(|(name, values)| {
                    values
                        .iter()
                        .find(|v| v.to_lowercase() == target)
                        .map(|v| (name.clone(), v.clone()))
                });
                match option {
                    Some((name, value)) => {
                        selected.insert(name, value);
                        *self.stack.last_mut().expect("stack never empty") = Page::Item { product, selected };
                        StepOutcome::plain(self.render(self.current()))
                    }
                    None => self.invalid(&format!("`{target}` is not clickable on this page.")),
                }
            }
            Page::Search | Page::Section { .. } => {
                self.invalid(&format!("`{target}` is not clickable on this page."))
            }
        }
    }
}

impl ShopEnv {
    pub fn new() -> Self {
        Self::default()
    }
}

impl TaskEnvironment for ShopEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::MockShop
    }

    fn reset(&mut self, task: &TaskInstance) -> Result<String, EnvError> {
        let Fixtures::Shop(catalog) = &task.fixtures else {
            return Err(EnvError::Config(format!("task {} has no catalog", task.id)));
        };
        catalog.validate()?;
        let session = Session {
            catalog: Arc::clone(catalog),
            stack: vec![Page::Search],
        };
        let first_page = session.render(&Page::Search);
        self.session = Some(session);
        Ok(format!(
            "You are shopping in a web store to satisfy an instruction. \
Available actions: search[query] while the page has a search bar, and click[element] for any listed clickable \
(a product index, an option value, description, features, reviews, prev, back to search, buy now). \
Buying with click[buy now] ends the episode.\n\
Instruction: {}\n\
Observation: {first_page}",
            task.instruction
        ))
    }

    fn execute(&mut self, action: &str) -> Result<StepOutcome, EnvError> {
        let session = self.session.as_mut().ok_or(EnvError::NotReset)?;
        let Some((verb, arg)) = parse_bracketed(action) else {
            return Ok(session.invalid(&format!("`{}` is not of the form search[...] or click[...].", action.trim())));
        };
        Ok(match verb.to_ascii_lowercase().as_str() {
            "search" => {
                if *session.current() != Page::Search {
                    session.invalid("the search bar is not available on this page.")
                } else {
                    let hits = session.rank(&arg);
                    session.shown(Page::Results { hits })
                }
            }
            "click" => session.click(&arg),
            _ => session.invalid(&format!("unknown verb `{verb}`.")),
        })
    }

    fn grade(&mut self, task: &TaskInstance, final_answer: &str) -> Result<f64, EnvError> {
        let Some(GroundTruth::Purchase(target)) = &task.ground_truth else {
            return Err(EnvError::Grading(format!("task {} has no purchase target", task.id)));
        };
        let Fixtures::Shop(catalog) = &task.fixtures else {
            return Err(EnvError::Grading(format!("task {} has no catalog", task.id)));
        };
        let Some((id, chosen)) = parse_purchase(final_answer) else {
            return Ok(0.0);
        };
        let Some(idx) = catalog.find(&id) else {
            return Ok(0.0);
        };
        let product = &catalog.products[idx];
        let options_ok = |k: &String, v: &String| chosen.get(k).is_some_and(|c| c.eq_ignore_ascii_case(v));
        if product.id.eq_ignore_ascii_case(&target.product_id) && target.options.iter().all(|(k, v)| options_ok(k, v)) {
            return Ok(1.0);
        }
        let mut total = 0usize;
        let mut matched = 0usize;
        for attr in &target.attributes {
            total += 1;
            if product.attributes.iter().any(|a| a.eq_ignore_ascii_case(attr)) {
                matched += 1;
            }
        }
        for (k, v) in &target.options {
            total += 1;
            if options_ok(k, v) {
                matched += 1;
            }
        }
        if let Some(max) = target.max_price {
            total += 1;
            if product.price <= max {
                matched += 1;
            }
        }
        Ok(if total == 0 { 0.0 } else { matched as f64 / total as f64 })
    }

    fn fork(&self) -> Box<dyn TaskEnvironment> {
        Box::new(ShopEnv::new())
    }
}
