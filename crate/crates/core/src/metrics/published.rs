//! Published benchmark and ablation results, kept as data so their improvement column can be re-derived.

/// One method row: `[MSE, MAD, SAD, Grad, Conn]` and the printed improvement (percent, `None` for the baseline).
#[derive(Clone, Copy, Debug)]
pub struct PublishedRow {
    pub method: &'static str,
    pub values: [f64; 5],
    pub impro: Option<f64>,
}

/// Rows sharing one benchmark and prompt type; `baseline` names the reference row.
#[derive(Clone, Copy, Debug)]
pub struct PublishedGroup {
    pub benchmark: &'static str,
    pub prompt: &'static str,
    pub baseline: &'static str,
    pub rows: &'static [PublishedRow],
}

impl PublishedGroup {
    pub fn baseline_row(&self) -> &PublishedRow {
        self.rows.iter().find(|r| r.method == self.baseline).expect("baseline present")
    }
}

/// An ablation: columns are `(MSE, SAD)` pairs per benchmark/prompt, the first row is the baseline.
#[derive(Clone, Copy, Debug)]
pub struct AblationTable {
    pub name: &'static str,
    pub columns: [&'static str; 8],
    pub rows: &'static [(&'static str, [f64; 8], Option<f64>)],
}

pub const BENCHMARKS: &[PublishedGroup] = &[
    PublishedGroup {
        benchmark: "AIM-500",
        prompt: "point",
        baseline: "SmartMatting",
        rows: &[
            PublishedRow { method: "MAM", values: [0.0752, 0.108, 186.5, 37.48, 40.38], impro: Some(-120.86) },
            PublishedRow { method: "MatAny", values: [0.0425, 0.0523, 87.05, 33.44, 25.35], impro: Some(-22.73) },
            PublishedRow { method: "SmartMatting", values: [0.0302, 0.0388, 66.27, 46.63, 18.77], impro: None },
            PublishedRow { method: "LiteSDMatte", values: [0.0115, 0.0207, 34.43, 24.32, 19.97], impro: Some(39.61) },
            PublishedRow { method: "SDMatte", values: [0.0109, 0.0189, 31.8, 26.84, 17.51], impro: Some(43.27) },
        ],
    },
    PublishedGroup {
        benchmark: "AIM-500",
        prompt: "box",
        baseline: "SmartMatting",
        rows: &[
            PublishedRow { method: "MAM", values: [0.0116, 0.0222, 36.66, 21.04, 18.99], impro: Some(-32.02) },
            PublishedRow { method: "MatAny", values: [0.0545, 0.064, 106.26, 31.74, 20.24], impro: Some(-263.5) },
            PublishedRow { method: "SmartMatting", values: [0.0077, 0.0151, 25.33, 27.16, 13.54], impro: None },
            PublishedRow { method: "SEMat", values: [0.0071, 0.0146, 24.3, 16.06, 13.64], impro: Some(11.06) },
            PublishedRow { method: "LiteSDMatte", values: [0.0056, 0.0124, 20.83, 20.94, 12.9], impro: Some(18.11) },
            PublishedRow { method: "SDMatte", values: [0.0049, 0.0116, 19.45, 20.63, 12.58], impro: Some(22.78) },
            PublishedRow { method: "SDMatte*", values: [0.0036, 0.0097, 16.42, 14.89, 11.0], impro: Some(37.62) },
        ],
    },
    PublishedGroup {
        benchmark: "AIM-500",
        prompt: "mask",
        baseline: "MGMatting",
        rows: &[
            PublishedRow { method: "MGMatting", values: [0.0155, 0.0285, 48.28, 20.78, 20.26], impro: None },
            PublishedRow { method: "LiteSDMatte", values: [0.003, 0.0094, 15.83, 19.17, 11.29], impro: Some(53.38) },
            PublishedRow { method: "SDMatte", values: [0.0027, 0.0087, 14.53, 16.94, 10.95], impro: Some(57.28) },
        ],
    },
    PublishedGroup {
        benchmark: "AM-2K",
        prompt: "point",
        baseline: "SmartMatting",
        rows: &[
            PublishedRow { method: "MAM", values: [0.0597, 0.0813, 141.6, 22.48, 31.52], impro: Some(-82.06) },
            PublishedRow { method: "MatAny", values: [0.0116, 0.0188, 32.2, 15.68, 20.39], impro: Some(36.89) },
            PublishedRow { method: "SmartMatting", values: [0.0302, 0.0366, 62.61, 33.82, 15.93], impro: None },
            PublishedRow { method: "LiteSDMatte", values: [0.0095, 0.0161, 27.51, 13.59, 17.74], impro: Some(45.81) },
            PublishedRow { method: "SDMatte", values: [0.006, 0.0104, 17.54, 13.17, 10.86], impro: Some(63.32) },
        ],
    },
    PublishedGroup {
        benchmark: "AM-2K",
        prompt: "box",
        baseline: "SmartMatting",
        rows: &[
            PublishedRow { method: "MAM", values: [0.0038, 0.01, 17.14, 11.28, 10.34], impro: Some(-1.58) },
            PublishedRow { method: "MatAny", values: [0.0136, 0.0204, 35.3, 14.07, 17.57], impro: Some(-120.06) },
            PublishedRow { method: "SmartMatting", values: [0.0038, 0.0088, 14.91, 16.53, 9.31], impro: None },
            PublishedRow { method: "SEMat", values: [0.0028, 0.0075, 12.89, 8.69, 8.44], impro: Some(22.28) },
            PublishedRow { method: "LiteSDMatte", values: [0.0033, 0.0073, 12.54, 11.08, 8.49], impro: Some(17.58) },
            PublishedRow { method: "SDMatte", values: [0.0029, 0.0065, 11.04, 10.09, 6.99], impro: Some(27.93) },
            PublishedRow { method: "SDMatte*", values: [0.002, 0.0054, 9.23, 8.69, 6.41], impro: Some(40.54) },
        ],
    },
    PublishedGroup {
        benchmark: "AM-2K",
        prompt: "mask",
        baseline: "MGMatting",
        rows: &[
            PublishedRow { method: "MGMatting", values: [0.0199, 0.0309, 53.31, 10.92, 13.95], impro: None },
            PublishedRow { method: "LiteSDMatte", values: [0.0014, 0.0049, 8.45, 9.55, 6.57], impro: Some(65.34) },
            PublishedRow { method: "SDMatte", values: [0.0012, 0.0043, 7.3, 6.96, 5.78], impro: Some(72.24) },
        ],
    },
    PublishedGroup {
        benchmark: "P3M-500-NP",
        prompt: "point",
        baseline: "SmartMatting",
        rows: &[
            PublishedRow { method: "MAM", values: [0.0875, 0.1163, 207.53, 29.43, 43.49], impro: Some(-200.35) },
            PublishedRow { method: "MatAny", values: [0.0295, 0.0342, 57.33, 25.95, 15.97], impro: Some(-5.37) },
            PublishedRow { method: "SmartMatting", values: [0.0239, 0.0291, 50.46, 28.5, 19.64], impro: None },
            PublishedRow { method: "LiteSDMatte", values: [0.0121, 0.0173, 29.94, 16.55, 21.82], impro: Some(32.28) },
            PublishedRow { method: "SDMatte", values: [0.0134, 0.0183, 32.02, 20.35, 20.76], impro: Some(28.1) },
        ],
    },
    PublishedGroup {
        benchmark: "P3M-500-NP",
        prompt: "box",
        baseline: "SmartMatting",
        rows: &[
            PublishedRow { method: "MAM", values: [0.0061, 0.0115, 18.86, 13.58, 9.56], impro: Some(-21.81) },
            PublishedRow { method: "MatAny", values: [0.0328, 0.0372, 60.97, 22.22, 13.62], impro: Some(-306.77) },
            PublishedRow { method: "SmartMatting", values: [0.0037, 0.0081, 14.1, 18.31, 10.14], impro: None },
            PublishedRow { method: "SEMat", values: [0.0028, 0.0063, 10.88, 11.19, 7.67], impro: Some(26.53) },
            PublishedRow { method: "LiteSDMatte", values: [0.0025, 0.0054, 9.31, 12.56, 6.83], impro: Some(32.76) },
            PublishedRow { method: "SDMatte", values: [0.002, 0.0046, 7.9, 9.32, 6.31], impro: Some(44.0) },
            PublishedRow { method: "SDMatte*", values: [0.0016, 0.0044, 7.58, 10.87, 5.85], impro: Some(46.32) },
        ],
    },
    PublishedGroup {
        benchmark: "P3M-500-NP",
        prompt: "mask",
        baseline: "MGMatting",
        rows: &[
            PublishedRow { method: "MGMatting", values: [0.01, 0.0178, 30.48, 14.93, 13.4], impro: None },
            PublishedRow { method: "LiteSDMatte", values: [0.0011, 0.0039, 6.66, 11.1, 5.22], impro: Some(66.39) },
            PublishedRow { method: "SDMatte", values: [0.0007, 0.003, 5.1, 6.47, 4.12], impro: Some(77.07) },
        ],
    },
    PublishedGroup {
        benchmark: "RefMatte-RW-100",
        prompt: "point",
        baseline: "SmartMatting",
        rows: &[
            PublishedRow { method: "MAM", values: [0.1651, 0.1896, 336.49, 49.91, 27.8], impro: Some(-806.15) },
            PublishedRow { method: "MatAny", values: [0.0118, 0.0137, 24.35, 18.13, 4.98], impro: Some(11.03) },
            PublishedRow { method: "SmartMatting", values: [0.0127, 0.0153, 26.75, 23.01, 5.38], impro: None },
            PublishedRow { method: "LiteSDMatte", values: [0.0096, 0.0131, 22.9, 15.74, 7.29], impro: Some(9.85) },
            PublishedRow { method: "SDMatte", values: [0.0091, 0.0116, 20.45, 15.57, 4.01], impro: Some(26.78) },
        ],
    },
    PublishedGroup {
        benchmark: "RefMatte-RW-100",
        prompt: "box",
        baseline: "SmartMatting",
        rows: &[
            PublishedRow { method: "MAM", values: [0.0124, 0.0179, 31.46, 15.93, 5.45], impro: Some(14.03) },
            PublishedRow { method: "MatAny", values: [0.0118, 0.0136, 23.85, 15.63, 4.47], impro: Some(27.66) },
            PublishedRow { method: "SmartMatting", values: [0.0173, 0.0199, 34.86, 23.86, 4.9], impro: None },
            PublishedRow { method: "SEMat", values: [0.0055, 0.0075, 13.24, 10.58, 3.12], impro: Some(56.9) },
            PublishedRow { method: "LiteSDMatte", values: [0.006, 0.0082, 14.39, 12.85, 3.58], impro: Some(51.18) },
            PublishedRow { method: "SDMatte", values: [0.0047, 0.0062, 10.92, 11.41, 2.8], impro: Some(61.08) },
            PublishedRow { method: "SDMatte*", values: [0.0041, 0.0059, 10.33, 10.54, 2.41], impro: Some(64.73) },
        ],
    },
    PublishedGroup {
        benchmark: "RefMatte-RW-100",
        prompt: "mask",
        baseline: "MGMatting",
        rows: &[
            PublishedRow { method: "MGMatting", values: [0.0258, 0.0326, 56.06, 16.17, 9.56], impro: None },
            PublishedRow { method: "LiteSDMatte", values: [0.0009, 0.0022, 3.86, 8.44, 2.31], impro: Some(81.3) },
            PublishedRow { method: "SDMatte", values: [0.0008, 0.0019, 3.27, 6.23, 1.88], impro: Some(85.41) },
        ],
    },
];

/// Placement of prompt cross-attention over down, mid and up blocks.
pub const CROSS_ATTENTION_PLACEMENT: AblationTable = AblationTable {
    name: "cross attention placement",
    columns: ["AIM-500 point MSE", "AIM-500 point SAD", "RefMatte-RW-100 point MSE", "RefMatte-RW-100 point SAD", "AIM-500 box MSE", "AIM-500 box SAD", "RefMatte-RW-100 box MSE", "RefMatte-RW-100 box SAD"],
    rows: &[
        ("none", [0.0135, 40.53, 0.0156, 36.56, 0.0087, 25.79, 0.0061, 15.74], None),
        ("down", [0.0122, 39.5, 0.0162, 36.88, 0.0111, 29.76, 0.006, 15.52], Some(-4.06)),
        ("mid", [0.0111, 38.02, 0.0135, 34.07, 0.007, 24.01, 0.0053, 14.23], Some(11.67)),
        ("up", [0.014, 42.57, 0.0149, 38.27, 0.0103, 28.75, 0.0068, 17.61], Some(-7.77)),
        ("down+mid", [0.0127, 40.77, 0.0146, 36.12, 0.0062, 21.94, 0.0066, 16.72], Some(5.27)),
        ("down+up", [0.0174, 49.07, 0.0166, 37.38, 0.0094, 27.65, 0.0078, 19.16], Some(-15.43)),
        ("mid+up", [0.0147, 44.7, 0.0154, 38.03, 0.0087, 25.92, 0.0084, 20.44], Some(-11.25)),
        ("down+mid+up", [0.0154, 44.31, 0.0184, 41.89, 0.0061, 20.23, 0.0062, 15.6], Some(-0.65)),
    ],
};

/// Opacity and coordinate embeddings switched on and off.
pub const PROMPT_EMBEDDINGS: AblationTable = AblationTable {
    name: "prompt embeddings",
    columns: ["AIM-500 point MSE", "AIM-500 point SAD", "RefMatte-RW-100 point MSE", "RefMatte-RW-100 point SAD", "AIM-500 box MSE", "AIM-500 box SAD", "RefMatte-RW-100 box MSE", "RefMatte-RW-100 box SAD"],
    rows: &[
        ("none", [0.0169, 44.23, 0.0115, 26.54, 0.0098, 28.55, 0.0054, 14.63], None),
        ("opacity", [0.0149, 44.03, 0.0111, 26.65, 0.0079, 24.77, 0.006, 15.52], Some(3.85)),
        ("coordinate", [0.0167, 45.17, 0.0104, 24.56, 0.0109, 28.85, 0.005, 13.95], Some(1.98)),
        ("opacity+coordinate", [0.0139, 40.18, 0.0107, 25.14, 0.0077, 24.26, 0.0052, 14.29], Some(10.2)),
    ],
};

/// Placement of masked self-attention over down, mid and up blocks.
pub const MASKED_ATTENTION_PLACEMENT: AblationTable = AblationTable {
    name: "masked attention placement",
    columns: ["AIM-500 point MSE", "AIM-500 point SAD", "RefMatte-RW-100 point MSE", "RefMatte-RW-100 point SAD", "AIM-500 box MSE", "AIM-500 box SAD", "RefMatte-RW-100 box MSE", "RefMatte-RW-100 box SAD"],
    rows: &[
        ("none", [0.0101, 30.62, 0.0879, 165.81, 0.0075, 23.78, 0.0272, 61.94], None),
        ("down", [0.0058, 20.61, 0.1378, 253.08, 0.0093, 27.79, 0.0227, 51.12], Some(-5.12)),
        ("mid", [0.0055, 20.43, 0.136, 245.48, 0.006, 21.34, 0.0368, 84.25], Some(-8.12)),
        ("up", [0.0074, 24.04, 0.0607, 112.46, 0.0052, 20.07, 0.0066, 17.66], Some(38.1)),
        ("down+mid", [0.0055, 20.99, 0.1393, 254.7, 0.0077, 24.49, 0.0336, 77.98], Some(-11.27)),
        ("down+up", [0.0128, 35.56, 0.0096, 22.29, 0.0073, 23.1, 0.0054, 14.41], Some(36.9)),
        ("mid+up", [0.0046, 18.78, 0.0714, 134.23, 0.005, 20.02, 0.0052, 13.86], Some(42.32)),
        ("down+mid+up", [0.0114, 32.81, 0.0099, 22.54, 0.0052, 20.13, 0.006, 14.6], Some(44.43)),
    ],
};

pub const ABLATIONS: [&AblationTable; 3] = [&CROSS_ATTENTION_PLACEMENT, &PROMPT_EMBEDDINGS, &MASKED_ATTENTION_PLACEMENT];
