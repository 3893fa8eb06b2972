use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::evidence::SignalKind;

/// The three semantic attack chains adjudicated separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chain {
    Override,
    Transfer,
    Bootstrap,
}

impl Chain {
    pub const ALL: [Chain; 3] = [Chain::Override, Chain::Transfer, Chain::Bootstrap];

    pub fn signal(self) -> SignalKind {
        match self {
            Chain::Override => SignalKind::Override,
            Chain::Transfer => SignalKind::ExternalTransfer,
            Chain::Bootstrap => SignalKind::RemoteBootstrap,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Chain::Override => "override",
            Chain::Transfer => "transfer",
            Chain::Bootstrap => "bootstrap",
        }
    }
}

impl fmt::Display for Chain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One value per chain, serialized as `{"override", "transfer", "bootstrap"}`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PerChain<T> {
    #[serde(rename = "override")]
    pub overriding: T,
    pub transfer: T,
    pub bootstrap: T,
}

impl<T: Copy> PerChain<T> {
    pub fn splat(value: T) -> Self {
        Self {
            overriding: value,
            transfer: value,
            bootstrap: value,
        }
    }
}

impl<T> PerChain<T> {
    pub fn from_fn(mut f: impl FnMut(Chain) -> T) -> Self {
        Self {
            overriding: f(Chain::Override),
            transfer: f(Chain::Transfer),
            bootstrap: f(Chain::Bootstrap),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Chain, &T)> {
        Chain::ALL.into_iter().map(move |c| (c, &self[c]))
    }
}

impl<T> Index<Chain> for PerChain<T> {
    type Output = T;

    fn index(&self, chain: Chain) -> &T {
        match chain {
            Chain::Override => &self.overriding,
            Chain::Transfer => &self.transfer,
            Chain::Bootstrap => &self.bootstrap,
        }
    }
}

impl<T> IndexMut<Chain> for PerChain<T> {
    fn index_mut(&mut self, chain: Chain) -> &mut T {
        match chain {
            Chain::Override => &mut self.overriding,
            Chain::Transfer => &mut self.transfer,
            Chain::Bootstrap => &mut self.bootstrap,
        }
    }
}
