pub mod autodiff;
pub mod cli;
pub mod graph;
pub mod ingest;
pub mod model;
pub mod seeding;
pub mod train;
