//! Opaque identifiers. Ordering is plain lexicographic string order, which is
//! the tie-break everywhere in the crate.

use serde::{Deserialize, Serialize};
use std::fmt;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Production line identifier.
    LineId
);
string_id!(
    /// Recipe identifier.
    RecipeId
);
string_id!(
    /// Production order identifier.
    OrderId
);
string_id!(
    /// Changeover group of a recipe. Recipes of the same family need no
    /// cleaning between batches unless the matrix says otherwise.
    Family
);
string_id!(SensorId);
