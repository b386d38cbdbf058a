use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    User,
    Admin,
}

/// A static bearer token and who it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub token: String,
    pub user: String,
    pub role: Role,
}

impl Session {
    pub fn new(user: &str, token: &str, role: Role) -> Session {
        Session {
            token: token.to_string(),
            user: user.to_string(),
            role,
        }
    }

    /// Parses `name:token`.
    pub fn parse(spec: &str, role: Role) -> Result<Session, String> {
        match spec.split_once(':') {
            Some((user, token)) if !user.is_empty() && !token.is_empty() => Ok(Session::new(user, token, role)),
            _ => Err(format!("expected NAME:TOKEN, got {spec:?}")),
        }
    }

    pub fn is_admin(&self) -> bool {
        self.role == Role::Admin
    }
}
