//! Golden renderings of the bundled templates. Set `UPDATE_SNAPSHOTS=1` to
//! rewrite them after an intentional template change.

mod support;

use std::path::PathBuf;

use cryptoscope::gateway::prompt_hash;
use cryptoscope::model::{DetectionSetting, Language, SourceUnit};
use cryptoscope::prompt::{extract_prior_responses, PromptBundle, PromptForge};

fn unit() -> SourceUnit {
    SourceUnit::new(
        "app/Legacy.java",
        Language::Java,
        "import javax.crypto.Cipher;\n\nclass Legacy {\n    Cipher c() throws Exception {\n        return Cipher.getInstance(\"DES\");\n    }\n}\n",
    )
}

fn check(name: &str, bundle: &PromptBundle) {
    let path: PathBuf = support::fixtures().join("snapshots").join(name);
    let text = &bundle.rendered_text;
    if std::env::var_os("UPDATE_SNAPSHOTS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, text).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing snapshot {}", path.display()));
    assert_eq!(text, &want, "{name} drifted from its snapshot");
}

#[test]
fn task_aware_detection() {
    let b = PromptForge::default()
        .build_detection_prompt(&unit(), &DetectionSetting::task_aware())
        .unwrap();
    check("detect_ta.txt", &b);
}

#[test]
fn unconstrained_detection() {
    let b = PromptForge::default()
        .build_detection_prompt(&unit(), &DetectionSetting::unconstrained())
        .unwrap();
    check("detect_uc.txt", &b);
}

#[test]
fn validation() {
    let responses = vec![
        "[{\"category\": \"Broken Algorithm\", \"api\": \"Cipher.getInstance\"}]".to_string(),
        "```json\n[]\n```".to_string(),
    ];
    let b = PromptForge::default().build_validation_prompt(&unit(), &responses).unwrap();
    check("validate.txt", &b);
    assert_eq!(extract_prior_responses(&b.rendered_text), responses);
}

#[test]
fn query_count_and_validation_do_not_change_the_detection_prompt() {
    let forge = PromptForge::default();
    let a = forge.build_detection_prompt(&unit(), &DetectionSetting::task_aware()).unwrap();
    let b = forge
        .build_detection_prompt(
            &unit(),
            &DetectionSetting::task_aware().with_validation(false).with_query_count(9).unwrap(),
        )
        .unwrap();
    assert_eq!(prompt_hash(&a), prompt_hash(&b));
    let uc = forge.build_detection_prompt(&unit(), &DetectionSetting::unconstrained()).unwrap();
    assert_ne!(prompt_hash(&a), prompt_hash(&uc));
}
