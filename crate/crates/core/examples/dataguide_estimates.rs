//! Builds the dataguide of a document and compares view size estimates
//! with the bytes the view would really hold.

use p2pxml::pattern::{evaluate_pattern, TreePattern};
use p2pxml::synopsis::{build_synopsis, build_synopsis_truncated, estimate_contribution, synopsis_bytes};
use p2pxml::xml::parse_document;

const DOC: &str = "<dblp>\
<article><title>Views in P2P</title><author>Ng</author><author>Kim</author><journal>VLDBJ</journal></article>\
<article><title>Twig joins</title><author>Ng</author><journal>TODS</journal></article>\
<book><title>Databases</title><author>Ullman</author><year>1988</year></book>\
</dblp>";

fn main() {
    let d = parse_document(DOC.as_bytes(), "dblp.xml").unwrap();
    let s = build_synopsis(&d);
    for n in s.nodes() {
        println!("{:<8} count {:>2}  val {:>3}  cont {:>4}", n.label, n.count, n.val_bytes, n.cont_bytes);
    }
    println!("synopsis {} bytes on the wire, document {}", synopsis_bytes(&s), DOC.len());
    println!("truncated at depth 1: {} bytes", synopsis_bytes(&build_synopsis_truncated(&d, Some(1))));

    for v in [
        "(//article (/title {val}))",
        "(//author {id,val})",
        "(/dblp (/book {cont}))",
        // predicates are ignored, so this overestimates
        "(//article (/journal {val} [= \"TODS\"]))",
        "(//article (/year {val}))",
    ] {
        let p = TreePattern::parse(v).unwrap();
        println!(
            "{v:<45} estimate {:>4}  actual {:>4}",
            estimate_contribution(&s, &p),
            evaluate_pattern(&d, &p).payload_bytes()
        );
    }
}
