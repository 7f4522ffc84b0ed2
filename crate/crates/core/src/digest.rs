use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// SHA-256 over several fields, each terminated by a NUL so that
/// `("ab", "c")` and `("a", "bc")` hash differently.
pub fn sha256_fields<I, S>(fields: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut hasher = Sha256::new();
    for field in fields {
        hasher.update(field.as_ref());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

/// Length of the short identifiers handed out for code blocks.
pub const SHORT_ID_LEN: usize = 12;

pub fn short(digest: &str) -> String {
    digest.chars().take(SHORT_ID_LEN).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_vector() {
        assert_eq!(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn field_boundaries_matter() {
        assert_ne!(sha256_fields(["ab", "c"]), sha256_fields(["a", "bc"]));
    }
}
