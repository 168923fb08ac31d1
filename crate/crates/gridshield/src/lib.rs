//! Tabular safe reinforcement learning with a predictive N-step safety shield.
//!
//! The crate trains Dyna-Q agents on gridworlds, synthesizes safety
//! controllers from a geometry-only transition system, and deploys learned
//! policies through a shield that verifies the greedy policy N steps ahead,
//! replans locally when verification fails, and replaces unsafe actions
//! before they execute. A benchmark harness measures path optimality under
//! distribution shift between training and deployment layouts.

// Keep the guide's code examples compiling: every chapter is doc-tested.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            pub struct $name;
        };
    }
    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(Layouts, "../../../book/src/layouts.md");
    chapter!(Dynaq, "../../../book/src/dynaq.md");
    chapter!(Safety, "../../../book/src/safety.md");
    chapter!(Shield, "../../../book/src/shield.md");
    chapter!(Harness, "../../../book/src/harness.md");
}

pub mod dynaq;
pub mod grid;
pub mod harness;
pub mod layouts;
pub mod mdp;
pub mod safety;
pub mod shield;
