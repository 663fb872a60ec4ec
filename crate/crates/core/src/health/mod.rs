//! Health-outcome reporting: symptom uploads, two-server additive-share
//! aggregation with optional Laplace noise, and the daily alert feed.

pub mod alerts;
pub mod field;
pub mod report;

pub use alerts::{match_alerts, publish_alert_feed, AlertEntry, AlertFeed, AlertScope, FeedRequest, MatchResult};
pub use field::{
    add_dp_noise, combine_aggregates, laplace_sample, split_shares, split_shares_with, AggregateResult,
    AggregationServer, FieldParams, HealthError, ServerAggregate, ShareBundle, ShareSubmission,
};
pub use report::{
    symptom_codes, upload_report, AnonymousRecord, CouponBoundRecord, DoseRef, ReportStore, SymptomReport,
    SymptomVector, UploadDecision, UploadReject,
};
