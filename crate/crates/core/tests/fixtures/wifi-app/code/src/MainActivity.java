public class MainActivity extends AppCompatActivity { void onCreate() { setContentView(main); startScanner(); } }
