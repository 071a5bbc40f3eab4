//! Embedding sizes of the reference models, so memory estimates can be
//! computed from model names alone.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelInfo {
    pub name: &'static str,
    pub aliases: &'static [&'static str],
    pub dim: usize,
    /// Parameter count in millions.
    pub params_m: u32,
    pub kind: ModelKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Generation,
    Embedding,
}

pub const MODELS: &[ModelInfo] = &[
    ModelInfo {
        name: "llama2",
        aliases: &["llama-2", "llama2-7b"],
        dim: 4096,
        params_m: 6920,
        kind: ModelKind::Generation,
    },
    ModelInfo {
        name: "qwen2.5",
        aliases: &["qwen", "qwen2.5-7b"],
        dim: 3584,
        params_m: 7620,
        kind: ModelKind::Generation,
    },
    ModelInfo {
        name: "falcon3",
        aliases: &["falcon", "falcon-3"],
        dim: 3072,
        params_m: 6980,
        kind: ModelKind::Generation,
    },
    ModelInfo {
        name: "mistral",
        aliases: &["mistral-7b"],
        dim: 4096,
        params_m: 6920,
        kind: ModelKind::Generation,
    },
    ModelInfo {
        name: "gemma2",
        aliases: &["gemma", "gemma-2"],
        dim: 2304,
        params_m: 2000,
        kind: ModelKind::Generation,
    },
    ModelInfo {
        name: "nv_embed",
        aliases: &["nv-embed", "nv-embed-v2", "nv_embed_v2", "nv"],
        dim: 4096,
        params_m: 7100,
        kind: ModelKind::Embedding,
    },
    ModelInfo {
        name: "e5",
        aliases: &["e5-large-v2", "e5_large_v2"],
        dim: 1024,
        params_m: 335,
        kind: ModelKind::Embedding,
    },
];

/// Case-insensitive lookup by canonical name or alias.
pub fn lookup(name: &str) -> Option<&'static ModelInfo> {
    let name = name.to_ascii_lowercase();
    MODELS
        .iter()
        .find(|m| m.name == name || m.aliases.contains(&name.as_str()))
}

pub fn names() -> Vec<&'static str> {
    MODELS.iter().map(|m| m.name).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims() {
        let dim = |n| lookup(n).unwrap().dim;
        assert_eq!(dim("LLaMA2"), 4096);
        assert_eq!(dim("qwen2.5"), 3584);
        assert_eq!(dim("falcon3"), 3072);
        assert_eq!(dim("mistral"), 4096);
        assert_eq!(dim("gemma2"), 2304);
        assert_eq!(dim("NV-Embed-v2"), 4096);
        assert_eq!(dim("e5-large-v2"), 1024);
        assert!(lookup("bert").is_none());
    }
}
