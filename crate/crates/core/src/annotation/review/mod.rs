mod server;
mod store;

pub use server::{router, serve, ServerHandle, REVIEWER_HEADER};
pub use store::{
    export_split, PrincipleTag, ReviewError, ReviewStats, ReviewStore, SampleFilter, SamplePage,
    SampleView, Verdict, VerdictAction, VerdictRequest, MAX_PAGE_SIZE,
};
