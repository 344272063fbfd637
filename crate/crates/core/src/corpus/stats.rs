//! Per-user training statistics and the four user types.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Corpus, Label, Split};
use crate::error::{Error, Result};

/// Users need strictly more training comments than this to get a type
/// other than Unknown (and their own user slot).
pub const MIN_KNOWN_COMMENTS: usize = 10;
pub const RED_MIN_RATE: f64 = 0.66;
pub const GREEN_MAX_RATE: f64 = 0.33;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UserType {
    Red,
    Yellow,
    Green,
    Unknown,
}

impl UserType {
    pub const ALL: [UserType; 4] = [UserType::Red, UserType::Yellow, UserType::Green, UserType::Unknown];

    /// Row of this type in type-embedding and type-bias tables.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            UserType::Red => "Red",
            UserType::Yellow => "Yellow",
            UserType::Green => "Green",
            UserType::Unknown => "Unknown",
        }
    }
}

impl fmt::Display for UserType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for UserType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UserType::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Domain(format!("unknown user type {s:?}")))
    }
}

/// Red iff `T > 10` and `R >= 0.66`; Yellow iff `T > 10` and
/// `0.33 < R < 0.66`; Green iff `T > 10` and `R <= 0.33`; otherwise Unknown.
pub fn classify_user_type(train_comments: usize, rejection_rate: f64) -> Result<UserType> {
    if !(0.0..=1.0).contains(&rejection_rate) {
        return Err(Error::Domain(format!("rejection rate {rejection_rate} outside [0, 1]")));
    }
    Ok(if train_comments <= MIN_KNOWN_COMMENTS {
        UserType::Unknown
    } else if rejection_rate >= RED_MIN_RATE {
        UserType::Red
    } else if rejection_rate > GREEN_MAX_RATE {
        UserType::Yellow
    } else {
        UserType::Green
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserStats {
    pub user: String,
    /// Training comments by this user.
    pub train_comments: usize,
    pub train_rejected: usize,
    pub utype: UserType,
}

impl UserStats {
    /// `None` when the user has no training comments.
    pub fn rejection_rate(&self) -> Option<f64> {
        (self.train_comments > 0).then(|| self.train_rejected as f64 / self.train_comments as f64)
    }

    pub fn is_known(&self) -> bool {
        self.train_comments > MIN_KNOWN_COMMENTS
    }
}

/// Users in order of first appearance: training authors first, then users
/// seen only in dev/test.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserStatsTable {
    users: Vec<UserStats>,
    index: HashMap<String, usize>,
}

impl UserStatsTable {
    pub fn from_users(users: Vec<UserStats>) -> Result<Self> {
        let mut index = HashMap::with_capacity(users.len());
        for (i, u) in users.iter().enumerate() {
            if index.insert(u.user.clone(), i).is_some() {
                return Err(Error::Domain(format!("user {:?} listed twice", u.user)));
            }
            if u.train_rejected > u.train_comments {
                return Err(Error::Domain(format!("user {:?} has more rejections than comments", u.user)));
            }
        }
        Ok(Self { users, index })
    }

    pub fn get(&self, user: &str) -> Option<&UserStats> {
        self.index.get(user).map(|&i| &self.users[i])
    }

    /// Type of `user`; users never seen in training are Unknown.
    pub fn user_type(&self, user: &str) -> UserType {
        self.get(user).map_or(UserType::Unknown, |s| s.utype)
    }

    pub fn users(&self) -> &[UserStats] {
        &self.users
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Users with more than ten training comments, in first-appearance order.
    pub fn known_users(&self) -> impl Iterator<Item = &UserStats> {
        self.users.iter().filter(|u| u.is_known())
    }
}

impl Serialize for UserStatsTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.users.serialize(s)
    }
}

impl<'de> Deserialize<'de> for UserStatsTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let users = Vec::<UserStats>::deserialize(d)?;
        UserStatsTable::from_users(users).map_err(serde::de::Error::custom)
    }
}

/// Counts `T(u)` and rejections over the train split, classifies every user.
pub fn compute_user_stats(corpus: &Corpus) -> UserStatsTable {
    let mut users: Vec<UserStats> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    let ordered = corpus
        .comments()
        .iter()
        .filter(|c| c.split == Split::Train)
        .chain(corpus.comments().iter().filter(|c| c.split != Split::Train));
    for c in ordered {
        let i = *index.entry(c.author.clone()).or_insert_with(|| {
            users.push(UserStats {
                user: c.author.clone(),
                train_comments: 0,
                train_rejected: 0,
                utype: UserType::Unknown,
            });
            users.len() - 1
        });
        if c.split == Split::Train {
            users[i].train_comments += 1;
            if c.label == Label::Reject {
                users[i].train_rejected += 1;
            }
        }
    }
    for u in &mut users {
        let rate = u.rejection_rate().unwrap_or(0.0);
        u.utype = classify_user_type(u.train_comments, rate).expect("rate is a ratio of counts");
    }
    UserStatsTable { users, index }
}
