pub mod cli;
pub mod cmnist;
pub mod colormetrics;
pub mod diffcore;
pub mod losses;
pub mod m21gan;
pub mod trainer;
