//! Reference prompt texts, transcribed character for character with
//! placeholders in braces. Trailing whitespace after the closing brace of
//! each listing is not part of the template.

pub const P1: &str = r#"Analyze the provided ABM text to identify the purpose of the model, including a description, research questions, system boundaries, and outcome variables. Present the extracted data exclusively in JSON format, ensuring that the JSON object is comprehensive and contains all requested information. Avoid any form of data truncation or summarizing, and ensure that the response is strictly limited to the JSON object without any supplementary text. Please do not generate extra text and answer. The JSON should follow this structure:
{
    'Model_Purpose': {
        'full_description': Full_DESCRIPTION,
        'research_questions': [
            'RESEARCH_QUESTION_1',
            'RESEARCH_QUESTION_2',
            ... 
        ],
        'system_boundaries': [],
        'outcome_variables': {
            VAR1_NAME: SHORT_DESCRIPTION,
            VAR2_NAME: SHORT_DESCRIPTION,
            ....
            } 
    } 
} 
"#;

pub const P2: &str = r#"Analyze the provided ABM text to identify the list of all agent sets, a short description, and their agent role in the system. Present the extracted data exclusively in JSON format, ensuring that the JSON object is comprehensive and contains all requested information. Avoid any form of data truncation or summarizing, and ensure that the response is strictly limited to the JSON object without any supplementary text. The JSON should follow this structure:

{
    AGENT_SET_1_NAME: { 
        'short_description':SHORT_DESCRIPTION, 
        'agent_role': SHORT_DESCRIPTION_AGENT_ROLE
    },
    ...
} 
"#;

pub const P3: &str = r#"Analyze the provided ABM text to identify and extract the complete list of variables, variable data type, and initial value related to the '{AGENT_SET_NAME}' agent. Please ensure you extract all variables and
characteristics. Present the extracted data exclusively in JSON format, ensuring that the JSON object is comprehensive and contains all requested information. Avoid any form of data truncation or summarization, and ensure that the response is strictly limited to the JSON object without any supplementary text. The JSON should follow this structure:

{ 
    '{AGENT_SET}' :{
        VAR1: {
            'short_description': SHORT_DESCRIPTION,
            'data_type': DATA_TYPE, 
            'initial_value':INITIAL_VALUE,
        }, 
        VAR2 :{...} 
    } 
} 
"#;

pub const P4: &str = r#"Analyze the provided ABM text to identify and extract the value boundaries, equation, order of execution, and execution frequency related to the '{VAR}' variable of the '{AGENT_SET_NAME}' agent. Please ensure you extract all variables and characteristics. Present the extracted data exclusively in JSON format, ensuring that the JSON object is comprehensive and contains all requested information. Avoid any form of data truncation or summarization, and ensure that the response is strictly limited to the JSON object without any supplementary text. The JSON should follow this structure:

{ 
    '{AGENT_SET_NAME}': { 
        '{VAR}': {
            'value_boundaries':VALUE_BOUNDARIES,
            'equation': EQUATION,
            'order_number':ORDER_NUMBER, 
            'frequency': FREQUENCY
        }
    }
}
"#;

pub const P5: &str = r#"Analyze the provided ABM text to identify and extract the information about the ABM simulation environment (space) type and environment (space) short description. Present the extracted data exclusively in JSON format, ensuring that the JSON object is comprehensive and contains all requested information. Avoid any form of data truncation or summarization, and ensure that the response is strictly limited to the JSON object without any supplementary text. The JSON should follow this structure:

{
    'Space': {
        'short_description':SHORT_DESCRIPTION,
        'type': TYPE 
    }
}
"#;

pub const P6: &str = r#"Analyze the provided ABM text to identify and extract the complete list of variables, variable short description, data type, and initial value related to the model space. Please ensure you extract all variables and characteristics. Present the extracted data exclusively in JSON format, ensuring that the JSON object is comprehensive and contains all requested information. Avoid any form of data truncation or summarization, and ensure that the response is strictly limited to the JSON object without any supplementary text. The JSON should follow this structure:

{
    'SPACE': {
        VAR1:{ 
            'short_description':SHORT_DESCRIPTION,
            'data_type': DATA_TYPE, 
            'initial_value':INITIAL_VALUE, 
        },
        VAR2 :{...}
    }
}
"#;

pub const P7: &str = r#"Analyze the provided ABM text to identify and extract the value boundaries, equation, execution order, and execution frequency related to the '{VAR}' variable of model space. Please ensure you extract all variables and characteristics. Present the extracted data exclusively in JSON format, ensuring that the JSON object is comprehensive and contains all requested information. Avoid any form of data truncation or summarization, and ensure that the response is strictly limited to the JSON object without any supplementary text. The JSON should follow this structure:

{
    'SPACE': {
        '{VAR}': {
            'value_boundaries': VALUE_BOUNDARIES,
            'equation': EQUATION,
            'excution_order':EXCUTION_ORDER,
            'frequency': FREQUENCY
        }
    } 
}
"#;

pub const P8: &str = r#"Analyze the provided ABM text to identify and extract the complete list of model-level variables, variable data type, and initial value. Please ensure you extract all variables and characteristics only at the model level. Present the extracted data exclusively in JSON format, ensuring the JSON object is comprehensive and contains all requested information. Avoid any form of data truncation or summarization, and ensure that the response is strictly limited to the JSON object without any supplementary text. The JSON should follow this structure:

{
    'Model-Level': {
        VAR1: {
            'short_description':SHORT_DESCRIPTION, 
            'data_type': DATA_TYPE, 
            'initial_value':INITIAL_VALUE, 
        }, 
        VAR2 :{...} 
    } 
}
"#;

pub const P9: &str = r#"Analyze the provided ABM text to identify and extract the value boundaries, equation, execution order, and execution frequency related to the '{VAR}' variable of Model-level variables. Please ensure you extract all variables and characteristics. Present the extracted data exclusively in JSON format, ensuring the JSON object is comprehensive and contains all requested information. Avoid any form of data truncation or summarization, and ensure that the response is strictly limited to the JSON object without any supplementary text. The JSON should follow this structure:

{
    'Model-Level': {
        '{VAR}': {
            'value_boundaries': VALUE_BOUNDARIES,
            'equation': EQUATION, 
            'order_number':ORDER_NUMBER, 
            'frequency': FREQUENCY
        }
    }
}
"#;

pub const INSTRUCTION: &str = r#"You are an Agent-based modeling specialist. Your duty is to help users in extracting information from ABM texts for coding purposes. Get the user messages to extract the relevant information from the uploaded file. Do not summarize information; neither truncate nor auto-generate and augment any data if data and information are not presented in the provided document. Just return a full report of the expected information in the JSON format without any extra text around it. 
"#;
