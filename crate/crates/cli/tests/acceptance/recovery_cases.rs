//! Raw model replies paired with the strict JSON a careful reader would
//! recover from them by hand.

pub struct Case {
    pub name: &'static str,
    pub raw: &'static str,
    pub expected: &'static str,
}

pub const CASES: &[Case] = &[
    Case {
        name: "clean object",
        raw: r#"{"a": "b"}"#,
        expected: r#"{"a": "b"}"#,
    },
    Case {
        name: "prose before",
        raw: "Here is the JSON you asked for:\n{\"a\": 1}",
        expected: r#"{"a": 1}"#,
    },
    Case {
        name: "prose after",
        raw: "{\"a\": true}\nLet me know if you need anything else.",
        expected: r#"{"a": true}"#,
    },
    Case {
        name: "prose around",
        raw: "Sure.\n\n{\"a\": [1, 2]}\n\nHope this helps!",
        expected: r#"{"a": [1, 2]}"#,
    },
    Case {
        name: "json fence",
        raw: "```json\n{\"a\": \"b\"}\n```",
        expected: r#"{"a": "b"}"#,
    },
    Case {
        name: "bare fence",
        raw: "```\n{\"a\": \"b\"}\n```",
        expected: r#"{"a": "b"}"#,
    },
    Case {
        name: "fence with prose",
        raw: "The model has one agent set:\n```json\n{\"Agent_Sets\": {\"Cows\": \"grazers\"}}\n```\nThat is all.",
        expected: r#"{"Agent_Sets": {"Cows": "grazers"}}"#,
    },
    Case {
        name: "single quotes",
        raw: "{'a': 'b', 'c': 'd'}",
        expected: r#"{"a": "b", "c": "d"}"#,
    },
    Case {
        name: "single quotes nested",
        raw: "{'Cows': {'energy': {'data_type': 'float', 'initial_value': '10'}}}",
        expected: r#"{"Cows": {"energy": {"data_type": "float", "initial_value": "10"}}}"#,
    },
    Case {
        name: "apostrophe inside single quotes",
        raw: "{'short_description': 'the farmer's herd size'}",
        expected: r#"{"short_description": "the farmer's herd size"}"#,
    },
    Case {
        name: "escaped apostrophe inside single quotes",
        raw: r"{'short_description': 'the farmer\'s herd'}",
        expected: r#"{"short_description": "the farmer's herd"}"#,
    },
    Case {
        name: "double quote inside single quotes",
        raw: r#"{'equation': 'label = "hungry"'}"#,
        expected: r#"{"equation": "label = \"hungry\""}"#,
    },
    Case {
        name: "apostrophe inside double quotes",
        raw: r#"{"a": "the pasture's grass"}"#,
        expected: r#"{"a": "the pasture's grass"}"#,
    },
    Case {
        name: "trailing comma in object",
        raw: r#"{"a": 1, "b": 2,}"#,
        expected: r#"{"a": 1, "b": 2}"#,
    },
    Case {
        name: "trailing comma in array",
        raw: r#"{"a": [1, 2, 3,]}"#,
        expected: r#"{"a": [1, 2, 3]}"#,
    },
    Case {
        name: "trailing commas nested with whitespace",
        raw: "{\"a\": {\"b\": [\"x\",\n ],\n },\n}",
        expected: r#"{"a": {"b": ["x"]}}"#,
    },
    Case {
        name: "comma inside string untouched",
        raw: r#"{"a": "one, two,}"}"#,
        expected: r#"{"a": "one, two,}"}"#,
    },
    Case {
        name: "braces inside strings",
        raw: "Result: {\"equation\": \"x = {y}\", \"note\": \"}\"} trailing",
        expected: r#"{"equation": "x = {y}", "note": "}"}"#,
    },
    Case {
        name: "quoted placeholder echo",
        raw: r#"{"energy": {"initial_value": "INITIAL_VALUE", "data_type": "float"}}"#,
        expected: r#"{"energy": {"initial_value": null, "data_type": "float"}}"#,
    },
    Case {
        name: "bare placeholder echo",
        raw: r#"{"energy": {"equation": EQUATION, "frequency": "every tick"}}"#,
        expected: r#"{"energy": {"equation": null, "frequency": "every tick"}}"#,
    },
    Case {
        name: "research question echo dropped",
        raw: r#"{"Model_Purpose": {"research_questions": ["Why?", "RESEARCH_QUESTION_2"]}}"#,
        expected: r#"{"Model_Purpose": {"research_questions": ["Why?"]}}"#,
    },
    Case {
        name: "bare research question echo dropped",
        raw: r#"{"research_questions": ["Why?", RESEARCH_QUESTION_3]}"#,
        expected: r#"{"research_questions": ["Why?"]}"#,
    },
    Case {
        name: "placeholder as part of text kept",
        raw: r#"{"a": "DATA_TYPE is float"}"#,
        expected: r#"{"a": "DATA_TYPE is float"}"#,
    },
    Case {
        name: "first parseable object wins",
        raw: "Draft: {not json at all}\nFinal: {\"a\": 1}",
        expected: r#"{"a": 1}"#,
    },
    Case {
        name: "explicit nulls kept",
        raw: r#"{"value_boundaries": null, "equation": null}"#,
        expected: r#"{"value_boundaries": null, "equation": null}"#,
    },
    Case {
        name: "unicode text",
        raw: "{'description': 'Schafe fressen Gras \u{2013} täglich'}",
        expected: "{\"description\": \"Schafe fressen Gras \u{2013} täglich\"}",
    },
    Case {
        name: "escaped newline kept",
        raw: r#"{"a": "line one\nline two"}"#,
        expected: r#"{"a": "line one\nline two"}"#,
    },
    Case {
        name: "everything at once",
        raw: "Of course! Here you go:\n```json\n{\n  'Model Purpose': {\n    'full_description': 'Grazing on a shared pasture',\n    'research_questions': ['Does the pasture recover?', 'RESEARCH_QUESTION_2',],\n  },\n}\n```\n",
        expected: r#"{"Model Purpose": {"full_description": "Grazing on a shared pasture", "research_questions": ["Does the pasture recover?"]}}"#,
    },
];
