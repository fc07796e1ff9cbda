//! The bundled language identifier compared with whatlang on sentences
//! that are not part of the seed corpora.

use ramp_core::evaluation::detect_language;
use whatlang::Lang;

const SENTENCES: &[(&str, &str)] = &[
    ("de", "Wir haben gestern Abend lange über die Zukunft der kleinen Buchhandlung gesprochen."),
    ("de", "Kannst du mir sagen, wann der nächste Zug nach Hamburg abfährt?"),
    ("de", "Die Kinder spielten bis zum Sonnenuntergang im Garten ihrer Großmutter."),
    ("en", "We spent most of the afternoon repairing the fence behind the old barn."),
    ("en", "Could you let me know whether the meeting has been moved to Thursday?"),
    ("en", "The children kept playing in their grandmother's garden until sunset."),
    ("es", "Pasamos casi toda la tarde arreglando la cerca detrás del viejo granero."),
    ("es", "¿Podrías decirme si la reunión se ha cambiado al jueves por la mañana?"),
    ("es", "Los niños siguieron jugando en el jardín de su abuela hasta el atardecer."),
    ("fr", "Nous avons passé presque tout l'après-midi à réparer la clôture derrière la grange."),
    ("fr", "Pourriez-vous me dire si la réunion a été déplacée à jeudi matin ?"),
    ("fr", "Les enfants ont continué à jouer dans le jardin de leur grand-mère jusqu'au coucher du soleil."),
    ("it", "Abbiamo passato quasi tutto il pomeriggio a riparare il recinto dietro il vecchio fienile."),
    ("it", "Potresti dirmi se la riunione è stata spostata a giovedì mattina?"),
    ("it", "I bambini hanno continuato a giocare nel giardino della nonna fino al tramonto."),
    ("nl", "We hebben bijna de hele middag het hek achter de oude schuur gerepareerd."),
    ("nl", "Kun je me vertellen of de vergadering naar donderdagochtend is verplaatst?"),
    ("nl", "De kinderen bleven tot zonsondergang in de tuin van hun grootmoeder spelen."),
    ("pt", "Passamos quase toda a tarde consertando a cerca atrás do velho celeiro."),
    ("pt", "Você poderia me dizer se a reunião foi transferida para quinta-feira de manhã?"),
    ("pt", "As crianças continuaram brincando no jardim da avó até o pôr do sol."),
    ("ru", "Мы провели почти весь день, чиня забор за старым сараем."),
    ("ru", "Дети продолжали играть в саду бабушки до самого заката."),
    ("ja", "私たちは午後のほとんどを古い納屋の裏の柵の修理に費やしました。"),
    ("ja", "子供たちは日が沈むまで祖母の庭で遊び続けました。"),
];

fn code(lang: Lang) -> Option<&'static str> {
    Some(match lang {
        Lang::Deu => "de",
        Lang::Eng => "en",
        Lang::Spa => "es",
        Lang::Fra => "fr",
        Lang::Ita => "it",
        Lang::Nld => "nl",
        Lang::Por => "pt",
        Lang::Rus => "ru",
        Lang::Jpn => "ja",
        _ => return None,
    })
}

#[test]
fn agrees_with_whatlang_where_it_is_reliable() {
    let mut compared = 0;
    for (lang, text) in SENTENCES {
        let (ours, _) = detect_language(text).unwrap();
        assert_eq!(&ours, lang, "{text}");
        if let Some(info) = whatlang::detect(text).filter(|i| i.is_reliable()) {
            if let Some(theirs) = code(info.lang()) {
                assert_eq!(ours, theirs, "{text}");
                compared += 1;
            }
        }
    }
    assert!(compared >= SENTENCES.len() / 2, "only {compared} reliable whatlang verdicts");
}
