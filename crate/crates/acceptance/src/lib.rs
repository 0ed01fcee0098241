//! Nothing here; run `cargo test -p archface-acceptance --test acceptance`.
