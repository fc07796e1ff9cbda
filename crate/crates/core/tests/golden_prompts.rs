//! Rendered prompts compared byte-for-byte against hand-written files in
//! `tests/golden/`. Each file holds the expected text plus one trailing
//! newline.

use std::path::PathBuf;

use ramp_core::corpus::{AttributeExample, AttributeValue, Task};
use ramp_core::prompting::{render_example_block, render_prompt, PromptMode, TaskTemplate};
use ramp_core::retrieval::RankedExample;

fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.strip_suffix('\n').expect("golden file ends with a newline").to_string()
}

fn ex(id: &str, src: &str, tgt: &str, lang: &str, attr: AttributeValue, markers: &[&str], opposite: &[&str]) -> AttributeExample {
    AttributeExample {
        id: id.into(),
        source_text: src.into(),
        target_text: tgt.into(),
        source_lang: "en".into(),
        target_lang: lang.into(),
        attribute: attr,
        markers: markers.iter().map(|s| s.to_string()).collect(),
        opposite_markers: opposite.iter().map(|s| s.to_string()).collect(),
    }
}

const TABLE_SRC: &str = "OK, then please follow me to your table.";
const COOK_SRC: &str = "After retiring from teaching, Cook became a novelist.";

fn ja_formal() -> AttributeExample {
    ex("ja-f", TABLE_SRC, "ではテーブルまで私について来てください。", "ja", AttributeValue::Formal, &["ついて来てください"], &["ついて来て"])
}

fn ja_informal() -> AttributeExample {
    ex("ja-i", TABLE_SRC, "ではテーブルまで私について来て。", "ja", AttributeValue::Informal, &["ついて来て"], &["ついて来てください"])
}

fn nl_feminine() -> AttributeExample {
    ex(
        "nl-f",
        COOK_SRC,
        "Nadat ze stopte met lesgeven, werd Cook schrijfster.",
        "nl",
        AttributeValue::Feminine,
        &["ze", "schrijfster"],
        &["hij", "schrijver"],
    )
}

fn nl_masculine() -> AttributeExample {
    ex(
        "nl-m",
        COOK_SRC,
        "Nadat hij stopte met lesgeven, werd Cook schrijver.",
        "nl",
        AttributeValue::Masculine,
        &["hij", "schrijver"],
        &["ze", "schrijfster"],
    )
}

#[test]
fn formality_blocks() {
    let t = TaskTemplate::default_for(Task::Formality);
    assert_eq!(render_example_block(&ja_formal(), PromptMode::Ramp, &t).unwrap(), golden("formality_ja_formal_ramp.txt"));
    assert_eq!(render_example_block(&ja_informal(), PromptMode::Ramp, &t).unwrap(), golden("formality_ja_informal_ramp.txt"));
    assert_eq!(render_example_block(&ja_formal(), PromptMode::Base, &t).unwrap(), golden("formality_ja_formal_base.txt"));
    assert_eq!(render_example_block(&ja_formal(), PromptMode::Mark, &t).unwrap(), golden("formality_ja_formal_ramp.txt"));
}

#[test]
fn vous_marker_phrase() {
    let t = TaskTemplate::default_for(Task::Formality);
    let fr = ex("fr-f", "Are you coming tonight?", "Vous venez ce soir ?", "fr", AttributeValue::Formal, &["Vous"], &["Tu"]);
    assert_eq!(render_example_block(&fr, PromptMode::Ramp, &t).unwrap(), golden("formality_fr_vous_ramp.txt"));
}

#[test]
fn gender_blocks() {
    let t = TaskTemplate::default_for(Task::Gender);
    assert_eq!(render_example_block(&nl_feminine(), PromptMode::Ramp, &t).unwrap(), golden("gender_nl_feminine_ramp.txt"));
    assert_eq!(render_example_block(&nl_masculine(), PromptMode::Ramp, &t).unwrap(), golden("gender_nl_masculine_ramp.txt"));
    assert_eq!(render_example_block(&nl_masculine(), PromptMode::Base, &t).unwrap(), golden("gender_nl_masculine_mark_off.txt"));
}

#[test]
fn full_prompt_with_one_example() {
    let t = TaskTemplate::default_for(Task::Formality);
    let ranked = vec![RankedExample { example: ja_formal(), similarity: 0.9, rank: 1, pool_position: 0 }];
    let p = render_prompt("Could you tell me where the station is?", "ja", AttributeValue::Formal, &ranked, PromptMode::Ramp, &t).unwrap();
    assert_eq!(p.text, golden("formality_ja_prompt_k1_ramp.txt"));
    assert_eq!(p.block_count, 1);
    assert_eq!(p.input_example_ids, vec!["ja-f".to_string()]);
}
