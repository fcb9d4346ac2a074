pub mod evaluate;
pub mod explain;
pub mod fit;
pub mod search;
pub mod simulate;
