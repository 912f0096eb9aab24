//! Contestable essay feedback.
//!
//! Persona-biased agents discuss each rubric dimension, a teacher step turns
//! the transcript into an argumentation framework, and the grade follows from
//! the arguments that survive. Students can challenge a grade; the challenge
//! joins the framework and the dimension is re-solved.
//!
//! - [`af`]: frameworks, complete and grounded semantics, text format.
//! - [`backend`]: chat-completion clients (HTTP, scripted, capturing).
//! - [`agents`], [`teacher`], [`prompts`]: discussion and aggregation.
//! - [`session`]: event-sourced sessions, the engine, on-disk store.
//! - [`evalharness`]: simulated challenges over labelled data and metrics.
//! - [`service`]: HTTP API; [`cli`]: the `contestable` binary.

pub mod af;
pub mod agents;
pub mod backend;
pub mod cli;
pub mod evalharness;
pub mod prompts;
pub mod rubric;
pub mod service;
pub mod session;
pub mod teacher;
