pub const PPEN_GOLDEN: [f64; 192] = [
    0.07452632029043615, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0,
    0.0, 0.15670245937192903, 0.0, 0.0,
    0.23284028595921386, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.0011145511550460455, 0.0,
    0.0, 0.15141455632347875, 0.0, 0.0,
    0.05457436582463415, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.030108941923459656, 0.0,
    0.0, 0.18124860477956095, 0.0, 0.0,
    0.14216471011258802, 0.0, 0.0, 0.008382435236451026,
    0.0, 0.0, 0.0, 0.0,
    0.0, 0.22489534233011205, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.11485387985813457, 0.0,
    0.0, 0.2026714376859204, 0.0, 0.0,
    0.0, 0.0, 0.108282108230318, 0.0,
    0.0, 0.0, 0.110276112920691, 0.0,
    0.0, 0.25875355038952075, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.20119860938368234, 0.0,
    0.0, 0.24098330353841124, 0.0, 0.0,
    0.0, 0.0, 0.03764203414534869, 0.0,
    0.0, 0.0, 0.14058632686132308, 0.0,
    0.004353833706543353, 0.2615784366899862, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.09324134407835394, 0.0,
    0.0, 0.14233380765603648, 0.0, 0.04291076304362823,
    0.06141968767738917, 0.0, 0.03663825096737819, 0.0,
    0.0, 0.0, 0.15674990683570417, 0.0,
    0.0, 0.29509226470372085, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0,
    0.0, 0.0, 0.14371929210532333, 0.0,
    0.0, 0.1821947880739037, 0.0, 0.0,
    0.0, 0.0, 0.002326147644174173, 0.022420982209048923,
    0.0, 0.0, 0.17745650623984316, 0.0,
    0.0, 0.16784393470555178, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.05379365435210395,
    0.0, 0.0, 0.21323555148854584, 0.0,
    0.0, 0.0, 0.0, 0.12185257261750645,
    0.03602181172470729, 0.0, 0.0, 0.11771528751970133,
    0.0, 0.0, 0.20792334080049052, 0.0,
    0.0, 0.014364238696771052, 0.0, 0.07365332505065478,
    0.0, 0.0, 0.0, 0.1258276172162701,
    0.0, 0.0, 0.2591876619845287, 0.0,
    0.0, 0.01253086004427581, 0.0, 0.03944732709041479,
    0.0, 0.0, 0.0, 0.11919014437661521,
    0.0, 0.0, 0.2606551789149422, 0.0,
    0.0, 0.04075778666706712, 0.0, 0.02794056144779885,
];
