//! Parses two small documents and evaluates tree patterns and a join over
//! them.

use p2pxml::pattern::{evaluate_pattern, evaluate_query, QuerySpec, TreePattern};
use p2pxml::xml::parse_document;

const BOOKS: [&str; 2] = [
    "<book><title>AI</title><author>Smith</author><author>Lee</author></book>",
    "<book><title>DB</title><year>2010</year><author>Lee</author></book>",
];
const PEOPLE: &str = "<people><person><name>Lee</name><city>Oslo</city></person></people>";

fn main() {
    let mut docs: Vec<_> = BOOKS
        .iter()
        .enumerate()
        .map(|(i, x)| parse_document(x.as_bytes(), &format!("book{i}.xml")).unwrap())
        .collect();
    docs.push(parse_document(PEOPLE.as_bytes(), "people.xml").unwrap());

    let d = &docs[0];
    for i in 0..d.len() {
        println!("{:<8} {}  {:?}", d.element(i).label, d.node_id(i), d.value_of(i));
    }

    for text in [
        "(//book (/title {val}))",
        "(//book {id} (/author {val} [= \"Lee\"]))",
        "(//book (/title {val}) (//*[~ 2010]))",
        "(/book {cont} (/year))",
    ] {
        let p = TreePattern::parse(text).unwrap();
        for d in &docs {
            let t = evaluate_pattern(d, &p);
            if !t.is_empty() {
                println!("{text} on {}: {}", d.uri(), t.to_json());
            }
        }
    }

    let q = QuerySpec::parse("(//book (/title {val}) (/author $a)); (//person (/name $n) (/city {val})) WHERE $a=$n").unwrap();
    println!("{}\n{}", q.canonical(), serde_json::to_string_pretty(&evaluate_query(&docs, &q).to_json()).unwrap());
}
