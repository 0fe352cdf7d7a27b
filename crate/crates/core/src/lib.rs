pub mod ca;
pub mod client;
pub mod clock;
pub mod crl;
pub mod der;
pub mod http;
pub mod ocsp;
pub mod oid;
pub mod parallel;
pub mod pem;
pub mod signing;
pub mod sim;
pub mod store;
