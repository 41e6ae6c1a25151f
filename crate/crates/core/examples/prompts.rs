//! Prints the prompt for every communication type and runs it through the
//! offline mock generator.
//!
//! cargo run --example prompts

use cocreate::comms::{build_prompt, execute_communication, CommunicationKind, MockGenerator};
use cocreate::story::{StoryDocument, StoryField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut doc = StoryDocument::default();
    doc.apply_edit(StoryField::Beginning, "A lighthouse keeper finds a letter in a bottle.");
    doc.apply_edit(StoryField::Development, "The letter is addressed to her, dated fifty years ahead.");
    doc.apply_edit(StoryField::Climax, "A storm brings the writer's boat onto the rocks.");
    doc.apply_edit(StoryField::Conclusion, "She keeps the light burning until he is ready to write it.");

    let generator = MockGenerator::new(5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for kind in CommunicationKind::ALL {
        println!("===== {} =====", kind.as_str());
        println!("{}", build_prompt(kind, &doc));
        let outcome = execute_communication(kind, &doc, &generator, &mut rng).expect("mock never fails");
        println!("----- response -----\n{}", outcome.raw_response);
        if let Some(fields) = &outcome.new_fields {
            for (field, text) in fields {
                println!("{}: {text}", field.label());
            }
        }
        if let Some(review) = &outcome.review_text {
            println!("review: {review}");
        }
        println!();
    }
}
