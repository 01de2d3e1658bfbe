//! Toy two-domain world: schema, state tracker, scripted expert, agenda
//! user simulator and corpus generation.

mod agenda;
mod episode;
mod expert;
mod schema;
mod tracker;

pub use agenda::UserSimulator;
pub use episode::{
    generate_corpus, replay_sequential, run_episode, DialogPolicy, EmptyPolicy, EpisodeLog, EpisodeTurn,
    ExpertPolicy, DEFAULT_MAX_TURNS,
};
pub use expert::{current_domain, expert_macro};
pub use schema::{
    availability_bucket, sample_goal, system_actions, user_actions, BeliefField, DomainGoal, DomainSchema,
    DomainSpec, Entity, SlotSpec, ToyWorld, UserGoal, AVAILABILITY_BUCKETS, DONTCARE,
};
pub use tracker::{apply_system_acts, Tracker, UserAct, UserIntent};
