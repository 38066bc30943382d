class TextUtils { static String text(String any) { return any.trim(); } static boolean enter(String text) { return text != null; } }
