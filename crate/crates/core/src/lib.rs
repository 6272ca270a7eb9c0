pub mod cohort;
pub mod finetune;
pub mod ingest;
pub mod lexicon;
pub mod llm;
pub mod runner;
pub mod scenarios;
pub mod scoring;
pub mod template;
pub mod timeline;
