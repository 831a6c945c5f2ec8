use sha2::{Digest, Sha256};

/// Lower-case hex SHA-256 of a request body; the sample's wire identity.
pub fn content_digest(body: &[u8]) -> String {
    hex::encode(Sha256::digest(body))
}
