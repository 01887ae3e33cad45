use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TargetSample, View};
use crate::error::{Error, Result};
use crate::scenario::ScenarioPanel;

/// One user's views and the overall confidence the committee gives them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserViews {
    pub user_id: String,
    #[serde(default = "one")]
    pub overall_confidence: f64,
    pub views: Vec<View>,
}

fn one() -> f64 {
    1.0
}

/// A view file: either a bare array of views (one user, full confidence) or
/// `{"users": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ViewFile {
    Single(Vec<View>),
    Users(UserList),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserList {
    pub users: Vec<UserViews>,
}

impl ViewFile {
    pub fn into_users(self) -> Vec<UserViews> {
        match self {
            ViewFile::Single(views) => vec![UserViews {
                user_id: "user".into(),
                overall_confidence: 1.0,
                views,
            }],
            ViewFile::Users(list) => list.users,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: ViewFile = serde_json::from_str(text)?;
        for user in file.clone().into_users() {
            if !(0.0..=1.0).contains(&user.overall_confidence) {
                return Err(Error::InvalidConfidence(user.overall_confidence));
            }
            for v in &user.views {
                v.validate()?;
            }
        }
        Ok(file)
    }

    /// Loads a view file; CSV target samples are resolved relative to it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = Self::parse(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let views: Vec<&mut View> = match &mut file {
            ViewFile::Single(v) => v.iter_mut().collect(),
            ViewFile::Users(list) => list
                .users
                .iter_mut()
                .flat_map(|u| u.views.iter_mut())
                .collect(),
        };
        for view in views {
            if let Some(TargetSample::Csv(rel)) = &view.target_sample {
                let sample = ScenarioPanel::load_csv(base.join(rel))?;
                let cols = (0..sample.num_factors())
                    .map(|k| sample.column(k))
                    .collect();
                view.target_sample = Some(TargetSample::Inline(cols));
            }
        }
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_array_is_one_user() {
        let f = ViewFile::parse("[]").unwrap();
        let users = f.into_users();
        assert_eq!(users.len(), 1);
        assert!(users[0].views.is_empty());
    }

    #[test]
    fn users_object() {
        let text = r#"{"users":[{"user_id":"a","overall_confidence":0.2,
            "views":[{"kind":"MeanLocation","columns":["x"],"direction":"=","target":{"mode":"Absolute","value":0.1}}]}]}"#;
        let users = ViewFile::parse(text).unwrap().into_users();
        assert_eq!(users[0].overall_confidence, 0.2);
        assert_eq!(users[0].views.len(), 1);
        assert!(ViewFile::parse(
            r#"{"users":[{"user_id":"a","overall_confidence":1.2,"views":[]}]}"#
        )
        .is_err());
        assert!(ViewFile::parse(r#"{"users":[],"extra":1}"#).is_err());
    }
}
