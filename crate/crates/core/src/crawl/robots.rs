use texting_robots::Robot;

/// Parsed robots.txt rules for one origin.
pub struct RobotsPolicy {
    robot: Option<Robot>,
}

impl std::fmt::Debug for RobotsPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RobotsPolicy")
            .field("has_rules", &self.robot.is_some())
            .finish()
    }
}

impl RobotsPolicy {
    pub fn allow_all() -> Self {
        RobotsPolicy { robot: None }
    }

    /// Unparseable files are treated as allowing everything.
    pub fn parse(user_agent: &str, body: &[u8]) -> Self {
        // Robot matching uses the product token, not the version suffix.
        let agent = user_agent.split('/').next().unwrap_or(user_agent);
        RobotsPolicy {
            robot: Robot::new(agent, body).ok(),
        }
    }

    pub fn allowed(&self, url: &str) -> bool {
        match &self.robot {
            Some(r) => r.allowed(url),
            None => true,
        }
    }
}
