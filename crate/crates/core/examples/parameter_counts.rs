//! Learnable parameters of the convolutional part and of every head.

use emk::aggregation::{count_parameters, ParameterConfig};

fn main() {
    let report = count_parameters(&ParameterConfig::default());
    print!("{}", report.to_text());
}
