//! Teacher judges: the chat-completion HTTP client, a content-addressed
//! response cache, and the deterministic offline mock.

mod cache;
mod http;
pub mod mock;

use std::sync::Arc;

pub use cache::{CacheKey, CachedTeacher, ResponseCache};
pub use http::{HttpTeacher, TeacherEndpoint};
pub use mock::{mock_judge, MockTeacher};

use crate::error::Result;

/// Anything that turns a prompt into a text completion.
///
/// `sample` distinguishes repeated draws of the same prompt (votes,
/// parse-failure retries). Deterministic teachers fold it into their seed;
/// sampling teachers use it to keep cached draws apart.
pub trait Teacher: Send + Sync {
    fn name(&self) -> &str;

    fn temperature(&self) -> f64;

    fn complete(&self, prompt: &str, sample: u32) -> Result<String>;
}

impl<T: Teacher + ?Sized> Teacher for Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn temperature(&self) -> f64 {
        (**self).temperature()
    }

    fn complete(&self, prompt: &str, sample: u32) -> Result<String> {
        (**self).complete(prompt, sample)
    }
}

impl<T: Teacher + ?Sized> Teacher for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn temperature(&self) -> f64 {
        (**self).temperature()
    }

    fn complete(&self, prompt: &str, sample: u32) -> Result<String> {
        (**self).complete(prompt, sample)
    }
}

pub type SharedTeacher = Arc<dyn Teacher>;
