//! Entity-relationship retrieval over entity-annotated text.
//!
//! The pipeline runs [`corpus`] ingestion and sentence segmentation, [`extraction`]
//! of entity and entity-pair contexts, [`erindex`] construction, relational query
//! answering in [`retrieval`], and run scoring in [`evaluation`]. The [`collection`]
//! module turns relational tables into E-R queries and tuple judgments.

pub mod collection;
pub mod corpus;
pub mod erindex;
pub mod evaluation;
pub mod extraction;
pub mod pipeline;
pub mod retrieval;
