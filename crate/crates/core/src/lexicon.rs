//! Common English words that double as given names or surnames.
//!
//! Name mentions matching one of these are flagged so generation metrics
//! can exclude them.

use std::collections::HashSet;
use std::sync::LazyLock;

const WORDS: &str = "
a able about above after again age all also am an and any april are art as at august
baker bell berry bill black bloom bond brown bush by
can care carter cash chase clay cook crane cross day date dean do down dr duke
each early english faith fields fish for ford fox free frost from gay glass gold golden
good gray grant green grey guy hall hand hart has have he heart her hill him his holly hope
house hunt hunter in is it iris ivy jack jade jay joy june just king knight lake lane
law lee little long love low major march mark marsh mason may miles mill mills miller moon
more new north not now of ok on or over page park patient penny pearl pierce pike pope
porter power pt price pt rain ray read reed rich rice ring rock rose ross rush sage sandy
say shaw short small snow song spring star stone storm summer sun swift taylor the their
this to top trust turner under up walker wall ward was waters way well wells west white
will win winter wise wood woods young yo
";

static COMMON: LazyLock<HashSet<&'static str>> = LazyLock::new(|| WORDS.split_whitespace().collect());

/// Case-insensitive membership.
pub fn is_common_word(word: &str) -> bool {
    COMMON.contains(word.to_lowercase().as_str())
}
